"""Shared test fixtures: synthetic NSL-KDD-shaped records and numeric oracles."""
import numpy as np

from ids_ebgan.dataset import SCHEMA, Kind, RawRecord

PROTOCOLS = ("tcp", "udp", "icmp")
SERVICES = ("http", "private", "ftp_data", "smtp", "domain_u", "telnet", "ecr_i", "other", "ftp")
FLAGS = ("SF", "S0", "REJ", "RSTR", "SH")

LABELS = {
    "normal": ("normal",),
    "dos": ("neptune", "smurf", "back", "teardrop"),
    "probe": ("satan", "ipsweep", "portsweep", "nmap"),
    "r2l": ("guess_passwd", "warezclient", "ftp_write"),
    "u2r": ("buffer_overflow", "rootkit"),
}


def random_record(rng: np.random.Generator, label: str = "normal", difficulty=None) -> RawRecord:
    """A schema-valid record; attack labels shift a few characteristic features."""
    values = []
    for spec in SCHEMA.features:
        if spec.kind is Kind.SYMBOLIC:
            pool = {2: PROTOCOLS, 3: SERVICES, 4: FLAGS}[spec.index]
            values.append(str(rng.choice(pool)))
        elif spec.kind is Kind.BINARY:
            values.append(float(rng.integers(0, 2)))
        elif spec.name.endswith("rate"):
            values.append(round(float(rng.uniform(0, 1)), 2))
        elif spec.name in ("src_bytes", "dst_bytes"):
            values.append(float(rng.integers(0, 50_000)))
        elif spec.name in ("count", "srv_count", "dst_host_count", "dst_host_srv_count"):
            values.append(float(rng.integers(0, 256)))
        else:
            values.append(float(rng.integers(0, 5)))
    if label != "normal":
        cat = next(c for c, names in LABELS.items() if label in names)
        if cat == "dos":
            values[3] = "S0"
            values[22] = float(rng.integers(200, 256))  # count
            values[24] = 1.0  # serror_rate
        elif cat == "probe":
            values[3] = "REJ"
            values[26] = 1.0  # rerror_rate
        else:
            values[10] = float(rng.integers(1, 5))  # num_failed_logins
            values[13] = 1.0  # root_shell
    return RawRecord(tuple(values), label, difficulty)


def nslkdd_lines(n: int, seed: int = 0, mix=(("normal", 0.6), ("dos", 0.25), ("probe", 0.1),
                                             ("r2l", 0.03), ("u2r", 0.02))):
    from ids_ebgan.dataset import serialize_record

    rng = np.random.default_rng(seed)
    cats = [c for c, _ in mix]
    probs = np.array([p for _, p in mix])
    out = []
    for _ in range(n):
        cat = cats[rng.choice(len(cats), p=probs / probs.sum())]
        label = str(rng.choice(LABELS[cat]))
        out.append(serialize_record(random_record(rng, label, int(rng.integers(0, 22)))))
    return out


def write_nslkdd(path, n: int, seed: int = 0, **kw):
    path.write_text("\n".join(nslkdd_lines(n, seed, **kw)) + "\n")
    return path


def two_cluster(n_normal=500, n_anomalous=200, dim=10, seed=0, spread=0.05):
    """Normal rows around 0.3, anomalies around 0.7, clipped to [0, 1]."""
    rng = np.random.default_rng(seed)
    xn = np.clip(0.3 + spread * rng.standard_normal((n_normal, dim)), 0, 1)
    xa = np.clip(0.7 + spread * rng.standard_normal((n_anomalous, dim)), 0, 1)
    return xn, xa


def central_difference(f, param: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``f()`` w.r.t. ``param`` (mutated in place and restored)."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = param[i]
        param[i] = old + step
        hi = f()
        param[i] = old - step
        lo = f()
        param[i] = old
        grad[i] = (hi - lo) / (2 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``, with 0 when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom < 1e-12:
        return float(np.linalg.norm(analytic - numeric))
    return float(np.linalg.norm(analytic - numeric) / denom)
