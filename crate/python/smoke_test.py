"""Smoke test for the Python bindings. Run with pytest or as a script."""

import math

import lipcert


def _residual(w):
    n = len(w[0])
    total = 0.0
    for i in range(n):
        for j in range(n):
            g = sum(row[i] * row[j] for row in w)
            total += (g - (1.0 if i == j else 0.0)) ** 2
    return math.sqrt(total)


def test_orthogonalize():
    a = [[1.0, 0.2, -0.1], [0.3, 1.1, 0.0], [0.0, -0.4, 0.9]]
    for method in ["cholesky", "cayley", "matexp", "lot"]:
        assert _residual(lipcert.orthogonalize(a, method)) < 1e-6, method


def test_certify_logits():
    # Head rows e1 and e2: the only gap row has norm sqrt(2), so both methods agree.
    head = [[1.0, 0.0], [0.0, 1.0]]
    naive = lipcert.certify_logits_naive([2.0, 0.0], 1.0, 0.5)
    tight = lipcert.certify_logits_tight([2.0, 0.0], head, 1.0, 0.5)
    assert naive[0] == tight[0] == 0
    assert abs(naive[2] - math.sqrt(2.0)) < 1e-9
    assert tight[2] >= naive[2] - 1e-12
    assert naive[3] and tight[3]


def test_train_and_certify():
    x, y = lipcert.two_moons(400, 0)
    xt, yt = lipcert.two_moons(200, 1)
    model = lipcert.Model(2, 2, seed=0)
    model.fit(x, y, epsilon=0.1, epochs=60)
    assert model.k_backbone() > 0.0
    clean = model.vra(xt, yt, 0.0)
    vra = model.vra(xt, yt, 0.1)
    assert clean >= 0.95
    assert vra <= clean
    certs = model.certify(xt, 0.1)
    assert len(certs) == len(xt)
    assert all(c[3] == (c[2] > 0.1) or abs(c[2] - 0.1) < 1e-9 for c in certs)


if __name__ == "__main__":
    test_orthogonalize()
    test_certify_logits()
    test_train_and_certify()
    print("python smoke test passed")
