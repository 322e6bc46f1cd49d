"""End-to-end smoke test for the idqn_py bindings.

Run after `pip install -e . --no-build-isolation` from this directory:

    python3 smoke_test.py [checkpoint.bin]

Builds a small environment and model, runs an episode with the model's
greedy policy, exercises the interpretability accessors, and checks the
distributional projection. With a checkpoint argument it also loads the
trained network and reports its greedy return.
"""

import math
import sys

import idqn_py


def approx(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    env = idqn_py.Env(width=6, height=6, pellets=4, cell_pixels=2,
                      frame_stack=2, step_cap=60)
    k, h, w = env.obs_shape()
    obs = env.reset(seed=7)
    assert len(obs) == k * h * w, "flat observation matches shape"
    assert all(0.0 <= v <= 1.0 for v in obs), "pixels in [0, 1]"
    assert env.pellets() and not env.done()
    assert idqn_py.Env.actions() == ["U", "D", "L", "R"]

    model = idqn_py.Model((k, h, w), seed=3)
    assert model.actions == 4
    emb = model.encode(obs)
    assert len(emb) == model.embedding_dim

    for a in range(model.actions):
        att = model.attention(emb, a)
        assert len(att) == model.keys_per_action
        assert approx(sum(att), 1.0, 1e-12), "attention sums to one"
        assert all(x > 0.0 for x in att)

    values = model.values()
    assert values == sorted(values) and len(set(values)) == len(values)
    q = model.q_values(emb)
    assert all(values[0] <= qa <= values[-1] for qa in q), "Q inside supports"

    embedding, q2, u, attention = model.forward(obs)
    assert embedding == emb and q2 == q
    assert all(ua >= 0.0 for ua in u)
    assert len(attention) == model.actions

    shape, pixels = model.invert_key(0, 0)
    assert shape == [k, h, w] and len(pixels) == k * h * w
    dshape, dpix = model.decode(model.key(0, 0))
    assert (dshape, dpix) == (shape, pixels), "invert_key decodes the key"

    # Greedy episode: deterministic, bounded by the step cap.
    ret, steps = 0.0, 0
    while not env.done():
        letter, _, _ = model.select_action(obs, lam=0.0)
        obs, reward, done = env.step(letter)
        ret, steps = ret + reward, steps + 1
        if done:
            break
    assert steps <= 60
    print(f"greedy episode: return={ret} steps={steps}")

    # Projection: mass is conserved and a terminal projection is a point mass.
    supports = [-2.0, -1.0, 0.0, 1.0, 2.0]
    probs = [0.1, 0.2, 0.4, 0.2, 0.1]
    proj = idqn_py.project_distribution(probs, supports, reward=0.5, gamma=0.9)
    assert approx(sum(proj), 1.0, 1e-12), "projection conserves mass"
    term = idqn_py.project_terminal(supports, reward=1.0)
    assert term[3] == 1.0 and approx(sum(term), 1.0)

    expected_q = sum(p * z for p, z in zip(proj, supports))
    assert math.isfinite(expected_q)

    if len(sys.argv) > 1:
        trained = idqn_py.Model.load(sys.argv[1])
        tk, th, tw = trained.obs_shape()
        tenv = idqn_py.Env(width=8, height=8, pellets=8, cell_pixels=4,
                           frame_stack=tk, step_cap=200)
        if tenv.obs_shape() != (tk, th, tw):
            raise SystemExit("checkpoint was trained on a different layout")
        tobs, tret = tenv.reset(seed=0), 0.0
        while not tenv.done():
            letter, _, _ = trained.select_action(tobs)
            tobs, reward, done = tenv.step(letter)
            tret += reward
            if done:
                break
        print(f"checkpoint greedy return on seed 0: {tret}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
