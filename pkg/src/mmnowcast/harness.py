"""Experiment orchestration: model training, metrics, cost evaluation, reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datagen, fusion, nn, opflayer
from . import tensor as T
from .grid import GridCase, SystemInstant, builtin_ieee6, load_case
from .tensor import ConfigurationError

__all__ = [
    "MODEL_IDS",
    "ExperimentConfig",
    "TrialResult",
    "ExperimentResult",
    "rmse_percent",
    "trial_seeds",
    "run_experiment",
    "run_cost_surface",
    "SurfaceResult",
    "summarize",
    "report",
    "write_results_csv",
    "read_results_csv",
]

MODEL_IDS = ("perfect", "persistence", "um-base1", "um-base2", "mm-seq", "mm-e2e")
RENEWABLE_MODES = ("pv-only", "pv-wind")


@dataclass
class ExperimentConfig:
    models: tuple[str, ...] = MODEL_IDS
    fusion: str = "concat"
    meteo_extractor: str = "none"
    renewables: str = "pv-only"
    trials: int = 10
    master_seed: int = 0
    dataset_dir: str | None = None  # built in memory when unset
    n_samples: int = 2000
    case_path: str | None = None  # bundled 6-bus case when unset
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    e2e: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(lr=1e-4, max_epochs=10, patience=3))
    cold_start: bool = False  # E2E from random weights instead of the MM-Seq solution
    output_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.models = tuple(self.models)
        bad = [m for m in self.models if m not in MODEL_IDS]
        if bad:
            raise ConfigurationError(f"unknown model id(s) {bad}; choose from {MODEL_IDS}")
        if not self.models:
            raise ConfigurationError("at least one model is required")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.renewables not in RENEWABLE_MODES:
            raise ConfigurationError(f"renewables must be one of {RENEWABLE_MODES}")
        fusion.FusionConfig(self.fusion, self.meteo_extractor)  # validates both

    @property
    def fusion_config(self) -> fusion.FusionConfig:
        return fusion.FusionConfig(self.fusion, self.meteo_extractor)

    def case(self) -> GridCase:
        if self.case_path is None:
            return builtin_ieee6()
        p = Path(self.case_path)
        if not p.exists():
            raise FileNotFoundError(f"case file {p} does not exist")
        return load_case(p)

    def dataset(self) -> datagen.Dataset:
        if self.dataset_dir is None:
            return datagen.build_dataset(self.master_seed, self.n_samples, case=self.case())
        return datagen.load_dataset(self.dataset_dir)


@dataclass
class TrialResult:
    model: str
    trial: int
    seed: int
    mse: float  # on PV normalised by the plant rating
    mae: float
    rmse_pct: float
    mean_cost: float  # EUR per instant on the test split
    excess_pct: float  # vs the perfect forecast on the same instants
    rmse_pct_wind: float | None = None
    epochs: int = 0
    flagged: float = 0.0  # fraction of test instants with an approximate cost gradient
    wall_time: float = 0.0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list[TrialResult]
    histories: list[tuple[str, int, int, float, float]]  # model, trial, epoch, train loss, val loss
    perfect_train_cost: dict[int, float]  # per trial, mean C_sys of the perfect forecast on train
    seeds: dict[str, int]

    def by_model(self, model: str) -> list[TrialResult]:
        return [t for t in self.trials if t.model == model]

    def summary(self) -> dict[str, dict[str, float]]:
        return summarize(self.trials)


def rmse_percent(pred, truth, rating: float) -> float:
    """Root-mean-square error as a percentage of the plant rating."""
    if rating <= 0:
        raise ValueError("rating must be positive")
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth differ in shape")
    return float(100.0 * np.sqrt(np.mean((pred - truth) ** 2)) / rating)


def trial_seeds(master_seed: int, trials: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(trials)]


def _sub_seed(trial_seed: int, label: str) -> int:
    code = [ord(ch) for ch in label]
    return int(np.random.SeedSequence([trial_seed, *code]).generate_state(1)[0])


# ------------------------------------------------------------------- a trial

class _Trial:
    def __init__(self, cfg: ExperimentConfig, ds: datagen.Dataset, case: GridCase, index: int, seed: int):
        self.cfg, self.ds, self.case, self.index, self.seed = cfg, ds, case, index, seed
        self.split = ds.split(seed)
        self.meteo = ds.normalized_meteo(self.split)
        self.images = ds.images[..., None]
        self.wind = cfg.renewables == "pv-wind"
        cols = [ds.pv_norm] + ([ds.wind_norm] if self.wind else [])
        self.target = np.column_stack(cols)
        self.ratings = np.array([ds.farm.pv_rating] + ([ds.farm.wind_rating] if self.wind else []))
        self.truth_mw = np.column_stack([ds.p_pv, ds.p_wind])
        kinds = case.site_kinds()
        if sorted(kinds) != ["PV", "Wind"]:
            raise ConfigurationError("the case must have exactly one PV and one Wind site")
        self.site_order = [kinds.index("PV"), kinds.index("Wind")]
        self.layer = opflayer.OpfLayer(case)
        self.histories: list[tuple[str, int, int, float, float]] = []
        self._cache: dict[str, object] = {}

    # prediction (normalised units, N x n_out) -> per-site MW in case order
    def _sites(self, pred_norm: np.ndarray, idx: np.ndarray) -> np.ndarray:
        mw = np.array(self.truth_mw[idx])  # pv-only: wind is known
        mw[:, 0] = pred_norm[:, 0] * self.ratings[0]
        if self.wind:
            mw[:, 1] = pred_norm[:, 1] * self.ratings[1]
        out = np.empty_like(mw)
        out[:, self.site_order] = mw
        return out

    def _truth_sites(self, idx):
        out = np.empty((idx.size, 2))
        out[:, self.site_order] = self.truth_mw[idx]
        return out

    def costs(self, pred_norm, idx, tag="test", gradients=False):
        # kink-averaged gradients are only needed for training
        return self.layer.batch(self.ds.load[idx], self._truth_sites(idx), np.maximum(self._sites(pred_norm, idx), 0.0),
                                keys=[(tag, int(i)) for i in idx], resolve_kinks=gradients)

    # ----------------------------------------------------------- training
    def _fit(self, label, nets, forward, loss="mse", cfg=None, eval_fn=None, evaluate_initial=False):
        cfg = dataclasses.replace(cfg or self.cfg.train, seed=_sub_seed(self.seed, label + "/order"))
        tgt = self.target

        def loss_fn(b):
            return nn.mse(forward(b), tgt[b][:, : forward.n_out])

        rep = nn.train(nets, self.split.train, self.split.val, loss_fn if loss == "mse" else loss, cfg,
                       eval_fn=eval_fn, evaluate_initial=evaluate_initial)
        for e, (tr, va) in enumerate(zip(rep.train_losses, rep.val_losses), start=1):
            self.histories.append((label, self.index, e, tr, va))
        return rep

    def unimodal(self):
        """Trained CNN-base (images) and FNN-base (meteo); shared by both UM baselines."""
        if "um" in self._cache:
            return self._cache["um"]
        cnn = nn.build_cnn_base(_sub_seed(self.seed, "cnn-base"))
        fnn = nn.build_fnn_base(24, _sub_seed(self.seed, "fnn-base"))
        ims, met = self.images, self.meteo

        def f_img(b):
            return cnn(ims[b])

        def f_met(b):
            return fnn(met[b])

        f_img.n_out = f_met.n_out = 1
        r1 = self._fit("cnn-base", cnn, f_img)
        r2 = self._fit("fnn-base", fnn, f_met)
        extra = None
        if self.wind:
            # uni-modal baselines get a meteo-only wind model
            wnet = nn.build_fnn_base(24, _sub_seed(self.seed, "fnn-wind"))
            tgt = self.target

            def wloss(b):
                return nn.mse(wnet(met[b]), tgt[b][:, 1:2])

            nn.train(wnet, self.split.train, self.split.val, wloss,
                           dataclasses.replace(self.cfg.train, seed=_sub_seed(self.seed, "fnn-wind/order")))
            extra = wnet
        with T.no_grad():
            p_img = cnn(ims).data[:, 0]
            p_met = fnn(met).data[:, 0]
            p_wind = extra(met).data[:, 0] if extra is not None else None
        self._cache["um"] = (p_img, p_met, p_wind, max(r1.epochs_run, r2.epochs_run))
        return self._cache["um"]

    def mm_net(self):
        if "mm" in self._cache:
            return self._cache["mm"]
        net = fusion.MultiModalNet(self.cfg.fusion_config, seed=_sub_seed(self.seed, "mm"), wind_head=self.wind)
        ims, met = self.images, self.meteo

        def fwd(b):
            return net(ims[b], met[b])

        fwd.n_out = self.target.shape[1]
        rep = self._fit("mm-seq", list(net.networks.values()), fwd)
        self._cache["mm"] = (net, rep.epochs_run)
        return self._cache["mm"]

    def e2e_net(self):
        if self.cfg.cold_start:
            net = fusion.MultiModalNet(self.cfg.fusion_config, seed=_sub_seed(self.seed, "mm-e2e"), wind_head=self.wind)
        else:
            seq, _ = self.mm_net()
            net = fusion.MultiModalNet(self.cfg.fusion_config, seed=_sub_seed(self.seed, "mm"), wind_head=self.wind)
            net.load_state_dict(seq.state_dict())
        ims, met = self.images, self.meteo
        n_out = self.target.shape[1]

        def loss(b):
            pred = net(ims[b], met[b])
            costs, grads, _ = self.costs(pred.data, b, tag="train", gradients=True)
            # d mean(C) / d normalised output
            jac = np.empty((b.size, n_out))
            jac[:, 0] = grads[:, self.site_order[0]] * self.ratings[0]
            if self.wind:
                jac[:, 1] = grads[:, self.site_order[1]] * self.ratings[1]
            jac /= b.size
            return T.external(pred, np.float64(costs.mean()), lambda g: g * jac, op="system_cost")

        def val_cost(idx):
            with T.no_grad():
                pred = net(ims[idx], met[idx]).data
            return float(self.costs(pred, idx, tag="val")[0].mean())

        rep = self._fit("mm-e2e", list(net.networks.values()), None, loss=loss, cfg=self.cfg.e2e,
                        eval_fn=val_cost, evaluate_initial=not self.cfg.cold_start)
        return net, rep.epochs_run

    # ---------------------------------------------------------- evaluation
    def predict(self, model: str) -> tuple[np.ndarray, int]:
        """Normalised predictions for every sample (N x n_out) and epochs trained."""
        ds, n = self.ds, len(self.ds)
        if model == "perfect":
            return self.target.copy(), 0
        if model == "persistence":
            cols = [datagen.persistence_forecast(ds, "PV") / self.ratings[0]]
            if self.wind:
                cols.append(datagen.persistence_forecast(ds, "Wind") / self.ratings[1])
            return np.column_stack(cols), 0
        if model in ("um-base1", "um-base2"):
            p_img, p_met, p_wind, epochs = self.unimodal()
            if model == "um-base1":
                pv = fusion.ensemble_average(p_img, p_met)
            else:
                tr = self.split.train
                w = fusion.fit_ensemble(p_img[tr], p_met[tr], self.target[tr, 0])
                pv = w(p_img, p_met)
            cols = [pv] + ([p_wind] if self.wind else [])
            return np.column_stack(cols), epochs
        if model == "mm-seq":
            net, epochs = self.mm_net()
        else:
            net, epochs = self.e2e_net()
        with T.no_grad():
            out = np.concatenate([net(self.images[i : i + 256], self.meteo[i : i + 256]).data for i in range(0, n, 256)])
        return out, epochs

    def run(self) -> list[TrialResult]:
        test = self.split.test
        perfect_cost, _, _ = self.costs(self.target[test], test)
        base = float(perfect_cost.mean())
        tr = self.split.train
        self.perfect_train = float(self.costs(self.target[tr], tr, tag="train")[0].mean()) if "mm-e2e" in self.cfg.models else None
        results = []
        for model in self.cfg.models:
            t0 = time.perf_counter()
            pred, epochs = self.predict(model)
            pred = np.clip(pred, 0.0, None)
            if model == "perfect":
                cost, flags = perfect_cost, np.zeros(test.size, bool)
            else:
                cost, _, flags = self.costs(pred[test], test)
            err = pred[test, 0] - self.target[test, 0]
            mean_cost = float(cost.mean())
            results.append(TrialResult(
                model=model, trial=self.index, seed=self.seed,
                mse=float(np.mean(err ** 2)), mae=float(np.mean(np.abs(err))),
                rmse_pct=rmse_percent(pred[test, 0] * self.ratings[0], self.target[test, 0] * self.ratings[0], self.ratings[0]),
                mean_cost=mean_cost, excess_pct=100.0 * (mean_cost - base) / base,
                rmse_pct_wind=(rmse_percent(pred[test, 1] * self.ratings[1], self.target[test, 1] * self.ratings[1],
                                            self.ratings[1]) if self.wind else None),
                epochs=epochs, flagged=float(np.mean(flags)), wall_time=time.perf_counter() - t0,
            ))
        return results


def _run_trial(args):
    cfg, ds, case, index, seed = args
    trial = _Trial(cfg, ds, case, index, seed)
    return trial.run(), trial.histories, trial.perfect_train


def run_experiment(config: ExperimentConfig, dataset: datagen.Dataset | None = None) -> ExperimentResult:
    """Train and evaluate every configured model over ``config.trials`` seeded splits."""
    case = config.case()
    ds = dataset if dataset is not None else config.dataset()
    seeds = trial_seeds(config.master_seed, config.trials)
    jobs = [(config, ds, case, i, s) for i, s in enumerate(seeds)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            outs = list(ex.map(_run_trial, jobs))
    else:
        outs = [_run_trial(j) for j in jobs]
    trials = [r for o in outs for r in o[0]]
    hist = [h for o in outs for h in o[1]]
    ptrain = {i: o[2] for i, o in enumerate(outs) if o[2] is not None}
    seed_table = {"master": config.master_seed, "dataset": ds.config.seed}
    seed_table.update({f"trial{i}": s for i, s in enumerate(seeds)})
    result = ExperimentResult(config, trials, hist, ptrain, seed_table)
    if config.output_dir is not None:
        write_experiment(result, config.output_dir)
    return result


# ------------------------------------------------------------------ outputs

RESULT_FIELDS = ("model", "trial", "seed", "mse", "mae", "rmse_pct", "rmse_pct_wind", "mean_cost", "excess_pct",
                 "epochs", "flagged")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_results_csv(path, trials: list[TrialResult]) -> None:
    """Deterministic per-trial metrics (wall time is kept out on purpose)."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(RESULT_FIELDS) + "\n")
        for t in trials:
            fh.write(",".join(_fmt(getattr(t, f)) for f in RESULT_FIELDS) + "\n")


def read_results_csv(path) -> list[TrialResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(TrialResult(
                model=row["model"], trial=int(row["trial"]), seed=int(row["seed"]), mse=float(row["mse"]),
                mae=float(row["mae"]), rmse_pct=float(row["rmse_pct"]),
                rmse_pct_wind=float(row["rmse_pct_wind"]) if row.get("rmse_pct_wind") else None,
                mean_cost=float(row["mean_cost"]), excess_pct=float(row["excess_pct"]),
                epochs=int(row["epochs"]), flagged=float(row["flagged"]),
            ))
    return out


def summarize(trials: list[TrialResult]) -> dict[str, dict[str, float]]:
    """Per model: mean / std / median over trials (population std, so one trial gives 0)."""
    models = list(dict.fromkeys(t.model for t in trials))
    out = {}
    for m in models:
        rows = [t for t in trials if t.model == m]
        entry = {"n": len(rows)}
        for key in ("mse", "mae", "rmse_pct", "mean_cost", "excess_pct"):
            v = np.array([getattr(r, key) for r in rows])
            entry[f"{key}_mean"] = float(v.mean())
            entry[f"{key}_std"] = float(v.std())
            entry[f"{key}_median"] = float(np.median(v))
        out[m] = entry
    return out


def write_summary_csv(path, summary: dict[str, dict[str, float]]) -> None:
    keys = [k for k in next(iter(summary.values())) if k != "n"]
    with open(path, "w") as fh:
        fh.write("model,n," + ",".join(keys) + "\n")
        for m, e in summary.items():
            fh.write(f"{m},{e['n']}," + ",".join(repr(e[k]) for k in keys) + "\n")


_PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")


def scatter_svg(path, summary: dict[str, dict[str, float]]) -> None:
    """Excess cost vs MAE, one marker per model with mean +- std whiskers."""
    w, h, pad = 520, 360, 60
    models = list(summary)
    xs = [summary[m]["mae_mean"] for m in models]
    ys = [summary[m]["excess_pct_mean"] for m in models]
    xe = [summary[m]["mae_std"] for m in models]
    ye = [summary[m]["excess_pct_std"] for m in models]
    x0, x1 = 0.0, max([a + b for a, b in zip(xs, xe)] + [1e-6]) * 1.1
    y0 = min([0.0] + [a - b for a, b in zip(ys, ye)])
    y1 = max([a + b for a, b in zip(ys, ye)] + [1e-6]) * 1.1
    sx = lambda v: pad + (v - x0) / (x1 - x0) * (w - 2 * pad)  # noqa: E731
    sy = lambda v: h - pad - (v - y0) / (y1 - y0) * (h - 2 * pad)  # noqa: E731
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">',
             f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
             f'<text x="{w / 2 - 60:.0f}" y="{h - 20}">MAE (normalised PV)</text>',
             f'<text x="8" y="{pad - 20}">excess cost (%)</text>',
             f'<text x="{pad - 4}" y="{h - pad + 14}" text-anchor="end">{x0:.3g}</text>',
             f'<text x="{w - pad}" y="{h - pad + 14}" text-anchor="end">{x1:.3g}</text>',
             f'<text x="{pad - 4}" y="{sy(y1):.1f}" text-anchor="end">{y1:.3g}</text>',
             f'<text x="{pad - 4}" y="{sy(y0):.1f}" text-anchor="end">{y0:.3g}</text>']
    for i, m in enumerate(models):
        col = _PALETTE[i % len(_PALETTE)]
        cx, cy = sx(xs[i]), sy(ys[i])
        parts.append(f'<line x1="{sx(xs[i] - xe[i]):.1f}" y1="{cy:.1f}" x2="{sx(xs[i] + xe[i]):.1f}" y2="{cy:.1f}" stroke="{col}"/>')
        parts.append(f'<line x1="{cx:.1f}" y1="{sy(ys[i] - ye[i]):.1f}" x2="{cx:.1f}" y2="{sy(ys[i] + ye[i]):.1f}" stroke="{col}"/>')
        parts.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="4" fill="{col}"/>')
        parts.append(f'<text x="{w - pad + 6}" y="{pad + 14 * i}" fill="{col}">{m}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def report(trials: list[TrialResult], out_dir) -> dict[str, dict[str, float]]:
    """Write ``results.csv``, ``summary.csv`` and ``report.svg``; byte-stable for equal input."""
    if not trials:
        raise ValueError("report needs at least one trial")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(out / "results.csv", trials)
    summary = summarize(trials)
    write_summary_csv(out / "summary.csv", summary)
    scatter_svg(out / "report.svg", summary)
    return summary


def config_to_toml(cfg: ExperimentConfig) -> str:
    def val(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, (tuple, list)):
            return "[" + ", ".join(val(x) for x in v) + "]"
        return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'

    buf = io.StringIO()
    buf.write("[experiment]\n")
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in ("train", "e2e") or v is None:
            continue
        buf.write(f"{f.name} = {val(v)}\n")
    for section in ("train", "e2e"):
        buf.write(f"\n[{section}]\n")
        for f in dataclasses.fields(nn.TrainConfig):
            if f.name == "seed":
                continue
            buf.write(f"{f.name} = {val(getattr(getattr(cfg, section), f.name))}\n")
    return buf.getvalue()


def write_experiment(result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report(result.trials, out)
    # wall times vary run to run, so they stay out of the CSV artifacts
    with open(out / "timings.txt", "w") as fh:
        for t in result.trials:
            fh.write(f"{t.model} trial {t.trial}: {t.wall_time:.3f} s\n")
    with open(out / "histories.csv", "w") as fh:
        fh.write("model,trial,epoch,train_loss,val_loss\n")
        for m, tr, e, a, b in result.histories:
            fh.write(f"{m},{tr},{e},{float(a)!r},{float(b)!r}\n")
    if result.perfect_train_cost:
        with open(out / "perfect_train_cost.csv", "w") as fh:
            fh.write("trial,mean_cost\n")
            for k, v in sorted(result.perfect_train_cost.items()):
                fh.write(f"{k},{float(v)!r}\n")
    (out / "config.resolved.toml").write_text(config_to_toml(result.config))
    (out / "seeds.txt").write_text("".join(f"{k} = {v}\n" for k, v in result.seeds.items()))
    return out


# -------------------------------------------------------------- cost surface

SURFACE_LOAD = 145.0
SURFACE_PV = SURFACE_WIND = 25.0


@dataclass
class SurfaceResult:
    pv_errors: np.ndarray
    wind_errors: np.ndarray
    surfaces: dict[float, np.ndarray]  # line-limit scale -> C_sys grid
    base_cost: float


def surface_instant(case: GridCase, load: float = SURFACE_LOAD, pv: float = SURFACE_PV,
                    wind: float = SURFACE_WIND) -> SystemInstant:
    kinds = case.site_kinds()
    ren = np.array([pv if k == "PV" else wind for k in kinds])
    return SystemInstant(load * case.load_shares(), ren)


def run_cost_surface(case: GridCase | None = None, errors=None, scales=(1.0, 0.5), out_dir=None) -> SurfaceResult:
    """C_sys over PV x wind prediction errors at 145 MW load, 25 MW PV and wind."""
    case = case if case is not None else builtin_ieee6()
    errors = np.arange(-25.0, 25.0 + 1e-9, 2.5) if errors is None else np.asarray(errors, dtype=float)
    base = surface_instant(case)
    surfaces = {float(s): opflayer.cost_surface(case, base, errors, errors, line_scale=s) for s in scales}
    res = SurfaceResult(errors, errors, surfaces, opflayer.system_cost(case, base).system)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for s, grid in surfaces.items():
            tag = f"{int(round(s * 100)):03d}"
            opflayer.write_surface_csv(out / f"surface_scale{tag}.csv", errors, errors, grid)
            opflayer.surface_svg(out / f"surface_scale{tag}.svg", errors, errors, grid,
                                 title=f"C_sys, line limits x{s:g}")
    return res
