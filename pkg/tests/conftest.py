import numpy as np


def fd_grad(f, x: np.ndarray, h: float = 1e-6, order: int = 2) -> np.ndarray:
    """Central finite differences of scalar f with respect to array x (perturbed in place).

    ``order=4`` uses the five-point stencil, which allows a larger h and so less roundoff.
    """
    stencil = {2: ((1, 0.5),), 4: ((1, 2 / 3), (2, -1 / 12))}[order]
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        acc = 0.0
        for k, c in stencil:
            flat[i] = old + k * h
            up = f()
            flat[i] = old - k * h
            down = f()
            acc += c * (up - down)
        flat[i] = old
        gflat[i] = acc / h
    return g


def rel_err(a, n, floor=1e-4):
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def model_gradient_error(variant: str, T: int = 10, model_dim: int = 6, state_dim: int = 3, seed: int = 0,
                         h: float = 1e-4) -> dict[str, float]:
    """Worst relative error of the tape gradient vs central differences, per parameter tensor."""
    from igbeat.autodiff import Tape
    from igbeat.backbone import BackboneConfig, init_params, sequence_loss

    rng = np.random.default_rng(seed)
    params = init_params(BackboneConfig(variant, model_dim=model_dim, state_dim=state_dim), rng)
    # move heads off their init plateau so every path carries gradient
    for name, t in params.items():
        t.value += 0.1 * rng.standard_normal(t.shape)
    x = 0.8 + 0.08 * rng.standard_normal(T)

    params.clear_grad()
    with Tape() as tape:
        loss = sequence_loss(x, params)
    tape.backward(loss)
    out = {}
    for name, t in params.items():
        analytic = t.grad.copy()
        numeric = fd_grad(lambda: float(sequence_loss(x, params).value), t.value, h=h, order=4)
        out[name] = float(rel_err(analytic, numeric).max())
    return out


def match_peaks(true_times, detected_times, tol: float = 0.05) -> tuple[int, int]:
    """Greedy one-to-one matching within +-tol seconds. Returns (hits, false_positives)."""
    true_times = np.asarray(true_times)
    used = np.zeros(true_times.size, dtype=bool)
    hits = 0
    for d in np.asarray(detected_times):
        k = np.searchsorted(true_times, d)
        best = None
        for j in (k - 1, k):
            if 0 <= j < true_times.size and not used[j] and abs(true_times[j] - d) <= tol:
                if best is None or abs(true_times[j] - d) < abs(true_times[best] - d):
                    best = j
        if best is not None:
            used[best] = True
            hits += 1
    return hits, len(detected_times) - hits


def random_monotone_knots(rng, n=None, increasing=None):
    n = n or int(rng.integers(2, 30))
    x = np.cumsum(rng.uniform(0.05, 3.0, n))
    steps = rng.exponential(1.0, n - 1) * (rng.uniform(size=n - 1) > 0.2)
    y = rng.normal() + np.concatenate([[0.0], np.cumsum(steps)])
    if increasing is None:
        increasing = rng.uniform() < 0.5
    return x, (y if increasing else -y)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str):
    """Log one acceptance line (shown in the terminal summary) and fail the test if not ok."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
