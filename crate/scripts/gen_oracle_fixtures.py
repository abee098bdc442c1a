"""Writes the discrete DGP fixtures used by the exact-enumeration oracle.

Tables are flat lists indexed by a mixed-radix context: latent index first
(for tables that condition on it), then w_0..w_{t-1} support indices, then
a_0..a_{t-1}.
"""
import itertools
import json
import math
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures" / "oracle"


def expit(x):
    return 1.0 / (1.0 + math.exp(-x))


def contexts(support, n_w, n_a, n_u=None):
    """Yields (u, w_values, w_idx, a) in table order."""
    u_range = range(n_u) if n_u is not None else [None]
    w_ranges = [range(len(support[t])) for t in range(n_w)]
    for u in u_range:
        for widx in itertools.product(*w_ranges):
            for a in itertools.product((0, 1), repeat=n_a):
                wv = [support[t][i] for t, i in enumerate(widx)]
                yield u, wv, list(widx), list(a)


def build(tau, support, u_values, u_probs, w_fn, a_fn, y_fn, theta, y_sd=1.0):
    nt = tau + 1
    w_probs, a_probs, y_mean = [], [], []
    for t in range(nt):
        w_probs.append([w_fn(t, u_values[u], wv, a) for u, wv, _, a in contexts(support, t, t, len(u_values))])
        a_probs.append([a_fn(t, u_values[u], wv, a) for u, wv, _, a in contexts(support, t + 1, t, len(u_values))])
        y_mean.append([y_fn(t, wv, a) for _, wv, _, a in contexts(support, t + 1, t + 1)])
    for rows in w_probs:
        for r in rows:
            s = sum(r)
            r[-1] = 1.0 - sum(r[:-1])
            assert abs(s - 1.0) < 1e-12 and min(r) >= 0
    return {
        "tau": tau,
        "w_support": support,
        "u_values": u_values,
        "u_probs": u_probs,
        "w_probs": w_probs,
        "a_probs": a_probs,
        "y_mean": y_mean,
        "y_latent": theta,
        "y_sd": y_sd,
    }


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def random_coefs(rng, n):
    return [rng.gauss(0.0, 0.7) for _ in range(n)]


def make_w_fn(rng, support, latent_effect=0.0):
    coef = {t: [random_coefs(rng, 3) for _ in support[t]] for t in range(len(support))}

    def w_fn(t, u, wv, a):
        prev_w = wv[-1] if wv else 0.0
        prev_a = a[-1] if a else 0
        scores = [c[0] + c[1] * prev_w + c[2] * prev_a + latent_effect * u * (v - support[t][0]) for v, c in zip(support[t], coef[t])]
        return softmax(scores)

    return w_fn


def make_a_fn(rng, decide):
    """Treatment at t=0 follows the regime exactly; later it depends on W, the
    latent and the past, with the follow probability kept inside (0.1, 0.95)."""
    coef = random_coefs(rng, 4)

    def a_fn(t, u, wv, a_prev):
        d = decide(t, wv, a_prev)
        if t == 0:
            return float(d)
        follow = 0.1 + 0.85 * expit(1.0 + coef[0] * wv[-1] + coef[1] * u + coef[2] * a_prev[-1] + coef[3] * t)
        return follow if d == 1 else 1.0 - follow

    return a_fn


def make_y_fn(rng, tau):
    coef = [random_coefs(rng, 5) for _ in range(tau + 1)]

    def y_fn(t, wv, a):
        c = coef[t]
        prev = wv[-2] if len(wv) > 1 else 0.0
        return c[0] + c[1] * wv[-1] + c[2] * wv[-1] ** 2 + c[3] * prev + c[4] * a[-1] + 0.3 * sum(a)

    return y_fn


def static(plan):
    return lambda t, wv, a_prev: plan[t]


def threshold(cutoff):
    return lambda t, wv, a_prev: int(wv[t] > cutoff)


def table_rule(breaks, table):
    return lambda t, wv, a_prev: table[t][sum(1 for b in breaks if wv[t] >= b)]


def fixture(name, description, conforming, regime, dgp):
    return {"name": name, "description": description, "conforming": conforming, "regime": regime, "dgp": dgp}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    fixtures = []
    binary = lambda n: [[0.0, 1.0] for _ in range(n)]

    rng = random.Random(11)
    fixtures.append(fixture(
        "static_treated_t1", "Two periods, binary covariate, binary latent affecting treatment; plan always treated.", True,
        {"static": [1, 1]},
        build(1, binary(2), [0.0, 1.0], [0.6, 0.4], make_w_fn(rng, binary(2)), make_a_fn(rng, static([1, 1])),
              make_y_fn(rng, 1), [1.5, 1.5])))

    rng = random.Random(12)
    tern = [[-1.0, 0.0, 1.0] for _ in range(3)]
    fixtures.append(fixture(
        "static_treated_t2_ternary", "Three periods, ternary covariate, three-valued latent; plan always treated.", True,
        {"static": [1, 1, 1]},
        build(2, tern, [-1.0, 0.0, 2.0], [0.3, 0.5, 0.2], make_w_fn(rng, tern), make_a_fn(rng, static([1, 1, 1])),
              make_y_fn(rng, 2), [-0.8, -0.8, -0.8])))

    rng = random.Random(13)
    fixtures.append(fixture(
        "static_untreated_t3", "Four periods, binary covariate and latent; plan never treated.", True,
        {"static": [0, 0, 0, 0]},
        build(3, binary(4), [0.0, 1.0], [0.5, 0.5], make_w_fn(rng, binary(4)), make_a_fn(rng, static([0, 0, 0, 0])),
              make_y_fn(rng, 3), [2.0, 2.0, 2.0, 2.0])))

    rng = random.Random(14)
    sup = [[0.0, 1.0], [0.0, 1.0, 2.0], [0.0, 1.0]]
    fixtures.append(fixture(
        "static_mixed_plan_t2", "Three periods with mixed supports; plan (1, 0, 1).", True,
        {"static": [1, 0, 1]},
        build(2, sup, [0.0, 1.0], [0.7, 0.3], make_w_fn(rng, sup), make_a_fn(rng, static([1, 0, 1])),
              make_y_fn(rng, 2), [1.0, 1.0, 1.0])))

    rng = random.Random(15)
    fixtures.append(fixture(
        "dynamic_threshold_t2", "Three periods, ternary covariate; treat when W exceeds 0.", True,
        {"rule": "threshold", "params": {"covariate": "W", "cutoff": 0.0}},
        build(2, tern, [0.0, 1.0], [0.5, 0.5], make_w_fn(rng, tern), make_a_fn(rng, threshold(0.0)),
              make_y_fn(rng, 2), [0.9, 0.9, 0.9])))

    rng = random.Random(16)
    breaks = [0.5]
    table = [[1, 0], [0, 1], [1, 1], [0, 1]]
    fixtures.append(fixture(
        "dynamic_table_t3", "Four periods, binary covariate; decision table over W by time.", True,
        {"rule": "decision_table", "params": {"covariate": "W", "breaks": breaks, "table": table}},
        build(3, binary(4), [0.0, 1.0], [0.4, 0.6], make_w_fn(rng, binary(4)), make_a_fn(rng, table_rule(breaks, table)),
              make_y_fn(rng, 3), [-1.2, -1.2, -1.2, -1.2])))

    rng = random.Random(17)
    fixtures.append(fixture(
        "no_latent_t2", "Three periods, no latent variable; plan always treated.", True,
        {"static": [1, 1, 1]},
        build(2, binary(3), [0.0], [1.0], make_w_fn(rng, binary(3)), make_a_fn(rng, static([1, 1, 1])),
              make_y_fn(rng, 2), [0.0, 0.0, 0.0])))

    rng = random.Random(18)
    fixtures.append(fixture(
        "violation_varying_theta", "Latent effect on the outcome changes over time.", False,
        {"static": [1, 1, 1]},
        build(2, binary(3), [0.0, 1.0], [0.5, 0.5], make_w_fn(rng, binary(3)), make_a_fn(rng, static([1, 1, 1])),
              make_y_fn(rng, 2), [0.0, 1.0, 2.5])))

    rng = random.Random(19)
    fixtures.append(fixture(
        "violation_latent_covariate", "Latent variable shifts the covariate distribution.", False,
        {"static": [1, 1, 1]},
        build(2, binary(3), [0.0, 1.0], [0.5, 0.5], make_w_fn(rng, binary(3), latent_effect=2.0),
              make_a_fn(rng, static([1, 1, 1])), make_y_fn(rng, 2), [1.0, 1.0, 1.0])))

    for f in fixtures:
        (OUT / f"{f['name']}.json").write_text(json.dumps(f, indent=1) + "\n")
        print("wrote", f["name"])


if __name__ == "__main__":
    main()
