import numpy as np

from padicnet.solver import NetworkParams
from padicnet.tree import TreeFunction, TreeKernel, get_activation, kernel_operator_norm


def random_network(rng, p, level, q, phi="tanh", L=None):
    """Random network whose contraction constant equals ``q``."""
    phi = get_activation(phi)
    n = p**level
    L = int(rng.integers(0, level)) if L is None else L
    W0 = TreeKernel(p, level, rng.normal(size=(n, n)))
    W = W0.scaled(q / (phi.lipschitz * kernel_operator_norm(W0)))
    m = p**L
    return NetworkParams(
        p, L, level - L, phi, "tanh",
        W=W,
        W_in=TreeKernel(p, L, rng.normal(size=(m, m))),
        W_out=TreeKernel(p, level, rng.normal(size=(n, n))),
        xi=TreeFunction(p, level, rng.normal(size=n)),
        xi_out=TreeFunction(p, level, rng.normal(size=n)),
    )


def random_input(rng, params):
    return TreeFunction(params.p, params.L, rng.normal(size=params.p**params.L))


def write_cli_inputs(d):
    """Example input files for the command-line tests; returns their paths."""
    import json

    from padicnet import io as pio
    from padicnet.recast import random_layered_net
    from padicnet.solver import self_coupling_kernel

    d.mkdir(parents=True, exist_ok=True)
    paths = {}

    def put(name, obj):
        paths[name] = d / name
        paths[name].write_text(json.dumps(obj) if not isinstance(obj, str) else obj)

    toy = NetworkParams(2, 0, 1, "pwl_sigmoid", W=self_coupling_kernel(2, 1, 0.5),
                        xi=TreeFunction(2, 1, [0.3, -0.2]))
    put("toy.json", pio.dumps(toy.to_dict()))
    put("zero.json", pio.dumps(NetworkParams(2, 0, 2, xi=TreeFunction.constant(2, 2, 0.4)).to_dict()))
    hot = NetworkParams(2, 0, 1, "tanh", W=TreeKernel.constant(2, 1, 3.0),
                        xi=TreeFunction.constant(2, 1, 1.0))
    put("hot.json", pio.dumps(hot.to_dict()))
    rng = np.random.default_rng(0)
    put("layered.json", pio.dumps(random_layered_net(rng, [3, 2, 4]).to_dict()))
    put("tied.json", pio.dumps(random_layered_net(rng, [2, 2, 2, 2], tied=True).to_dict()))
    put("wide.json", pio.dumps(random_layered_net(rng, [6, 2]).to_dict()))
    img = np.full((8, 8), 220, dtype=np.uint8)
    img[:, 4:] = 30
    paths["step.pgm"] = d / "step.pgm"
    pio.write_pgm(paths["step.pgm"], img)
    paths["flat.pgm"] = d / "flat.pgm"
    pio.write_pgm(paths["flat.pgm"], np.full((4, 4), 90, dtype=np.uint8), binary=False)
    iid = {"form": "iid", "sigma2": 1.0}
    put("priors.json", {"p": 2, "level": 1, "phi": "tanh", "varphi": "identity",
                        "W": iid, "W_in": iid, "xi": {"sigma2": 1.0},
                        "W_out": iid, "xi_out": {"kernel": [[1.0, 0.5], [0.5, 2.0]]}})
    zero = {"form": "iid", "sigma2": 0.0}
    put("zero_priors.json", {"p": 2, "level": 1, "W": zero, "W_in": zero, "W_out": zero,
                             "xi": {"sigma2": 1.0}, "xi_out": {"kernel": [[1.0, 0.5], [0.5, 2.0]]}})
    put("inputs.json", {"h": [1.0, 1.0], "x": [1.0, 1.0]})
    put("bad.json", '{"p": 2,\n "L": }')
    return paths


ACCEPTANCE_RESULTS = {}


def criterion(num, title):
    """Record and print the outcome of one acceptance criterion."""
    import functools

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                ACCEPTANCE_RESULTS[num] = ("FAIL", title)
                print(f"criterion {num:2d}: FAIL  {title}")
                raise
            ACCEPTANCE_RESULTS[num] = ("PASS", title)
            print(f"criterion {num:2d}: PASS  {title}")

        return wrapper

    return deco
