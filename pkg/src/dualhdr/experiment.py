"""Experiment configuration, run manifests and the implementations behind the CLI commands.

Each ``run_*`` function is a deterministic function of its config, seed and
input files, writes its artifacts under ``out`` and finishes by atomically
writing ``out/run_manifest.json`` that lists every artifact it produced.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from . import engine as E
from .capture import (CaptureConfig, FusionGroup, Scene, capture_ae, capture_dcs, default_scene, derive_seed,
                      synthetic_groups)
from .eafnet import Eafnet, EafnetConfig, TrainConfig, TrainingDiverged, train
from .io import (load_capture, load_scene, read_json, read_pfm, save_capture, save_scene, write_json, write_pfm,
                 write_png)
from .metrics import evaluate_sequence, frame_luminance, l_avg, lsd, t_ssim
from .radiometry import gamma_to_linear, mu_tonemap
from .report import line_plot_svg
from .verify import END_TO_END_TOLERANCE, OP_CASES, end_to_end_check, run_op_checks

log = logging.getLogger(__name__)

MANIFEST = "run_manifest.json"
CHECKPOINT = "model.ckpt"
HISTORY = "history.jsonl"
OUTPUTS = "outputs.json"


def _from_dict(cls, d: Optional[dict]):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {unknown}")
    return cls(**d)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce an experiment, serializable as JSON."""

    seed: int = 0
    scene: Optional[str] = None      # scene JSON path; None = the built-in dynamic scene
    scene_size: int = 64
    capture: CaptureConfig = field(default_factory=CaptureConfig)
    model: EafnetConfig = field(default_factory=EafnetConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    train_groups: int = 64           # synthetic training groups written by ``simulate``
    val_groups: int = 16
    patch: int = 32                  # spatial size of the synthetic training groups

    def to_json(self) -> dict:
        return {"seed": self.seed, "scene": self.scene, "scene_size": self.scene_size,
                "capture": asdict(self.capture), "model": self.model.to_json(),
                "training": self.training.to_json(), "train_groups": self.train_groups,
                "val_groups": self.val_groups, "patch": self.patch}

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        nested = {"capture": _from_dict(CaptureConfig, d.pop("capture", None)),
                  "model": EafnetConfig.from_json(d.pop("model", None) or {}),
                  "training": _from_dict(TrainConfig, d.pop("training", None))}
        return _from_dict(cls, {**d, **nested})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = read_json(path)
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid config JSON in {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ValueError(f"invalid config JSON in {path}: expected an object")
        return cls.from_json(d)


class RunManifest:
    """Collects artifacts and timings of one command; written once at the end."""

    def __init__(self, command: str, out: Path, config: Optional[dict] = None, seed: Optional[int] = None):
        self.out = Path(out)
        self.data = {"command": command, "version": __version__, "seed": seed, "config": config or {},
                     "artifacts": [], "checkpoint": None, "reports": [], "inputs": {}, "timings": {}}
        self._t0 = time.perf_counter()

    def add(self, paths) -> None:
        if isinstance(paths, (str, Path)):
            paths = [paths]
        for p in paths:
            rel = str(Path(p).relative_to(self.out))
            if rel not in self.data["artifacts"]:
                self.data["artifacts"].append(rel)

    def report(self, path) -> None:
        self.add(path)
        self.data["reports"].append(str(Path(path).relative_to(self.out)))

    def write(self, **extra) -> dict:
        self.data.update(extra)
        self.data["artifacts"].sort()
        self.data["timings"]["wall_seconds"] = time.perf_counter() - self._t0
        write_json(self.out / MANIFEST, self.data)
        return self.data


def _prepare_out(out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    probe = out / ".write-test"
    try:
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc.strerror}") from None
    return out


# ---------------------------------------------------------------------------
# simulate


def run_simulate(cfg: ExperimentConfig, out, scene: Optional[Scene] = None) -> dict:
    """Capture one scene in both modes (plus synthetic train/val sets) under ``out``."""
    out = _prepare_out(out)
    if cfg.capture.bit_depth != 8:
        raise ValueError("datasets are stored as 8-bit PNG; capture.bit_depth must be 8")
    if scene is None:
        scene = load_scene(cfg.scene) if cfg.scene else default_scene(cfg.scene_size, cfg.scene_size)
    man = RunManifest("simulate", out, cfg.to_json(), cfg.seed)
    save_scene(out / "scene.json", scene)
    man.add(out / "scene.json")
    capture = asdict(cfg.capture)

    ref, sec, groups = capture_dcs(scene, cfg.capture, derive_seed(cfg.seed, "dcs"))
    man.add(save_capture(out, "dcs", groups, list(ref) + list(sec),
                         {"capture": capture, "n_pairs": len(sec) // 2}))
    stream, ae_groups = capture_ae(scene, cfg.capture, derive_seed(cfg.seed, "ae"))
    man.add(save_capture(out, "ae", ae_groups, stream, {"capture": capture}))
    counts = {"dcs_groups": len(groups), "ae_groups": len(ae_groups)}
    for name, n in (("train", cfg.train_groups), ("val", cfg.val_groups)):
        if n > 0:
            gs = synthetic_groups(n, cfg.patch, seed=derive_seed(cfg.seed, name), cfg=cfg.capture)
            man.add(save_capture(out, name, gs, extra={"capture": capture}))
            counts[f"{name}_groups"] = len(gs)
    return man.write(counts=counts)


# ---------------------------------------------------------------------------
# train


def _training_sets(data, cfg: ExperimentConfig):
    """(train, val) groups: from a dataset directory, or generated in memory."""
    if data is None:
        tr = synthetic_groups(cfg.train_groups, cfg.patch, seed=derive_seed(cfg.seed, "train"), cfg=cfg.capture)
        va = (synthetic_groups(cfg.val_groups, cfg.patch, seed=derive_seed(cfg.seed, "val"), cfg=cfg.capture)
              if cfg.val_groups > 0 else [])
        return tr, va
    data = Path(data)
    if (data / "train" / "manifest.json").exists():
        tr = load_capture(data, "train")[1]
        va = load_capture(data, "val")[1] if (data / "val" / "manifest.json").exists() else []
        return tr, va
    return load_capture(data)[1], []


def _history_lines(path: Path, upto: int) -> List[str]:
    if not path.exists():
        return []
    keep = []
    for line in path.read_text().splitlines():
        if line.strip() and json.loads(line)["epoch"] <= upto:
            keep.append(line)
    return keep


def run_train(cfg: ExperimentConfig, out, data=None, resume=None, checkpoint_every: int = 1) -> dict:
    out = _prepare_out(out)
    man = RunManifest("train", out, cfg.to_json(), cfg.seed)
    train_groups, val_groups = _training_sets(data, cfg)
    if not train_groups:
        raise ValueError("training set is empty")
    tcfg = cfg.training
    net = Eafnet(cfg.model, seed=derive_seed(cfg.seed, "init"))
    start_epoch, history = 0, []
    if resume is not None:
        meta = E.load_into(net.params, resume)
        start_epoch = int(meta.get("epoch", 0))
        history = _history_lines(Path(resume).parent / HISTORY, start_epoch)
        man.data["inputs"]["resume"] = str(resume)
    ckpt, hist_path = out / CHECKPOINT, out / HISTORY
    cfg.model.save(out / "model.config.json")
    man.add([out / "model.config.json", hist_path])
    hist_path.write_text("".join(line + "\n" for line in history))
    meta = {"model": cfg.model.to_json(), "training": tcfg.to_json(), "seed": cfg.seed}

    def on_epoch(record, net_):
        with open(hist_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        if record["epoch"] % checkpoint_every == 0 or record["epoch"] == tcfg.epochs:
            E.save_checkpoint(ckpt, net_.params, {**meta, "epoch": record["epoch"]})

    t0 = time.perf_counter()
    tcfg_run = replace(tcfg, seed=cfg.seed)
    try:
        result = train(train_groups, cfg.model, tcfg_run, val_groups or None, net, start_epoch, on_epoch)
    except TrainingDiverged:
        man.write(status="diverged")
        raise
    last_epoch = start_epoch + len(result.history)
    if not ckpt.exists() or last_epoch == start_epoch or result.stopped_early:
        E.save_checkpoint(ckpt, net.params, {**meta, "epoch": last_epoch})
    man.add(ckpt)
    return man.write(checkpoint=CHECKPOINT, status="ok", epochs_run=len(result.history),
                     final_epoch=last_epoch, initial_loss=result.initial_loss, final_loss=result.final_loss,
                     stopped_early=result.stopped_early,
                     timings={"train_seconds": time.perf_counter() - t0})


# ---------------------------------------------------------------------------
# infer


def load_model(checkpoint, model_config=None) -> Eafnet:
    """Rebuild a network from a checkpoint and its config sidecar."""
    checkpoint = Path(checkpoint)
    if model_config is None:
        sidecar = checkpoint.parent / "model.config.json"
        if sidecar.exists():
            cfg = EafnetConfig.load(sidecar)
        else:
            header, _ = E.read_checkpoint(checkpoint)
            cfg = EafnetConfig.from_json(header["meta"]["model"])
    else:
        cfg = EafnetConfig.load(model_config) if not isinstance(model_config, EafnetConfig) else model_config
    net = Eafnet(cfg)
    E.load_into(net.params, checkpoint)
    return net


def naive_reconstruction(frame) -> np.ndarray:
    """Exposure-compensated single frame in scene radiance units."""
    return gamma_to_linear(frame.image, frame.meta)


def run_infer(out, data, checkpoint=None, model_config=None, naive: bool = False, seed: int = 0) -> dict:
    """Reconstruct every group of a capture (or, with ``naive``, every primary-camera frame)."""
    out = _prepare_out(out)
    frames, groups, manifest = load_capture(data)
    man = RunManifest("infer", out, {"naive": naive, "checkpoint": str(checkpoint) if checkpoint else None},
                      seed)
    man.data["inputs"]["data"] = str(data)
    entries = []
    if naive:
        wp = next((g.white_point for g in groups if g.white_point), None)
        if wp is None:
            wp = max(float(gamma_to_linear(f.image, f.meta).max()) for f in frames) or 1.0
        ref_of = {id(g.reference): k for k, g in enumerate(groups)}
        stream = sorted((f for f in frames if f.camera_id == "primary"), key=lambda f: f.timestamp)
        items = [(f, ref_of.get(id(f)), wp) for f in stream]
        outputs = [naive_reconstruction(f) for f, _, _ in items]
    else:
        if checkpoint is None:
            raise ValueError("infer needs a checkpoint unless --naive is given")
        net = load_model(checkpoint, model_config)
        items, outputs = [], []
        for k, g in enumerate(groups):
            st = net.stack(g)
            with E.no_grad():
                y = net.forward_stacks([st]).data[0]
            outputs.append(net.to_linear(np.transpose(y, (1, 2, 0)).astype(np.float64)) * st.white_point)
            items.append((g.reference, k, st.white_point))
    for j, ((frame, group_idx, wp), hdr) in enumerate(zip(items, outputs)):
        pfm, png = out / f"hdr_{j:04d}.pfm", out / f"preview_{j:04d}.png"
        write_pfm(pfm, hdr)
        write_png(png, mu_tonemap(hdr / wp))
        man.add([pfm, png])
        entries.append({"file": pfm.name, "preview": png.name, "white_point": wp, "group": group_idx,
                        "timestamp_us": frame.timestamp, "ev": frame.ev})
    write_json(out / OUTPUTS, {"data": str(data), "mode": "naive" if naive else "eafnet", "outputs": entries})
    man.add(out / OUTPUTS)
    return man.write(n_outputs=len(entries))


# ---------------------------------------------------------------------------
# evaluate / compare


def load_normalized_outputs(path) -> tuple:
    """Normalized outputs of an ``infer`` directory plus its index."""
    path = Path(path)
    if not (path / OUTPUTS).exists():
        raise FileNotFoundError(f"no {OUTPUTS} in {path}; run infer first")
    index = read_json(path / OUTPUTS)
    outs = [read_pfm(path / e["file"]).astype(np.float64) / e["white_point"] for e in index["outputs"]]
    return outs, index


def run_evaluate(out, outputs, data=None) -> dict:
    out = _prepare_out(out)
    man = RunManifest("evaluate", out)
    preds, index = load_normalized_outputs(outputs)
    data = data if data is not None else index.get("data")
    gts = None
    if data is not None and Path(data, "manifest.json").exists():
        _, groups, _ = load_capture(data)
        idx = [e.get("group") for e in index["outputs"]]
        if all(i is not None and groups[i].ground_truth is not None for i in idx):
            gts = [groups[i].normalized_truth() for i in idx]
    man.data["inputs"] = {"outputs": str(outputs), "data": None if data is None else str(data)}
    rep = evaluate_sequence(preds, gts, domain="mu")
    (out / "report.json").write_text(rep.dumps() + "\n")
    (out / "report.csv").write_text(rep.to_csv())
    man.report(out / "report.json")
    man.report(out / "report.csv")
    return man.write(has_fidelity=rep.has_fidelity)


def _sequence(path):
    """Frames and luminance domain of one side of a comparison.

    An ``infer`` directory yields normalized HDR outputs (compared after the
    mu-law); a capture directory yields its primary-camera LDR stream as
    recorded (display values).
    """
    path = Path(path)
    if (path / OUTPUTS).exists():
        return load_normalized_outputs(path)[0], "mu"
    if (path / "manifest.json").exists():
        frames = load_capture(path)[0]
        stream = sorted((f for f in frames if f.camera_id == "primary"), key=lambda f: f.timestamp)
        return [f.image for f in stream], "identity"
    raise FileNotFoundError(f"{path} is neither an infer output nor a capture directory")


def _fluctuation(trace: np.ndarray) -> dict:
    steps = np.abs(np.diff(trace)) if trace.size > 1 else np.zeros(1)
    rng = float(trace.max() - trace.min())
    return {"range": rng, "max_step": float(steps.max()),
            "range_x255": 255.0 * rng, "max_step_x255": 255.0 * float(steps.max())}


def compare_sequences(ae: Sequence[np.ndarray], dcs: Sequence[np.ndarray], domain: str = "mu",
                      dcs_domain: Optional[str] = None) -> dict:
    dcs_domain = dcs_domain or domain
    n = min(len(ae), len(dcs))
    warning = None
    if len(ae) != len(dcs):
        warning = f"sequence lengths differ ({len(ae)} vs {len(dcs)}); compared over the first {n} frames"
        warnings.warn(warning)
    ae, dcs = list(ae)[:n], list(dcs)[:n]
    side = {}
    for name, seq, dom in (("ae", ae, domain), ("dcs", dcs, dcs_domain)):
        trace = frame_luminance(seq, dom)
        side[name] = {"luminance": [float(v) for v in trace], "luminance_x255": [float(255 * v) for v in trace],
                      "lsd": lsd(seq, dom), "t_ssim": t_ssim(seq, dom), "l_avg": l_avg(seq, dom),
                      "fluctuation": _fluctuation(trace), "domain": dom}
    delta = {k: side["ae"][k] - side["dcs"][k] for k in ("lsd", "l_avg")}
    delta["t_ssim"] = (None if side["ae"]["t_ssim"] is None
                       else side["ae"]["t_ssim"] - side["dcs"]["t_ssim"])
    delta["luminance"] = [a - b for a, b in zip(side["ae"]["luminance"], side["dcs"]["luminance"])]
    ratio = side["ae"]["lsd"] / side["dcs"]["lsd"] if side["dcs"]["lsd"] > 0 else (
        float("inf") if side["ae"]["lsd"] > 0 else 1.0)
    return {"n_frames": n, "ae": side["ae"], "dcs": side["dcs"], "delta": delta, "lsd_ratio": ratio,
            "warning": warning}


def run_compare(out, ae, dcs) -> dict:
    out = _prepare_out(out)
    man = RunManifest("compare", out)
    man.data["inputs"] = {"ae": str(ae), "dcs": str(dcs)}
    ae_seq, ae_dom = _sequence(ae)
    dcs_seq, dcs_dom = _sequence(dcs)
    res = compare_sequences(ae_seq, dcs_seq, ae_dom, dcs_dom)
    if res["lsd_ratio"] == float("inf"):
        res["lsd_ratio"] = None  # JSON has no infinity; the DCS trace is exactly flat
        res["dcs_flat"] = True
    write_json(out / "comparison.json", res)
    svg = line_plot_svg({"AE": res["ae"]["luminance_x255"], "DCS": res["dcs"]["luminance_x255"]},
                        title="Per-frame mean luminance", y_label="mean luminance (x255)")
    (out / "luminance.svg").write_text(svg)
    man.report(out / "comparison.json")
    man.report(out / "luminance.svg")
    return man.write(warning=res["warning"])


# ---------------------------------------------------------------------------
# gradcheck


class GradcheckFailed(RuntimeError):
    def __init__(self, failed: List[str]):
        super().__init__(f"gradient check failed for: {', '.join(failed)}")
        self.failed = failed


def run_gradcheck(out=None, ops: Optional[Sequence[str]] = None, end_to_end: bool = True, seed: int = 0,
                  cases=None) -> dict:
    cases = OP_CASES if cases is None else cases
    results = run_op_checks(ops, cases, seed=seed)
    table = [r.to_json() for r in results]
    failed = [r.name for r in results if not r.passed]
    e2e = None
    if end_to_end:
        t0 = time.perf_counter()
        per_param = end_to_end_check(seed=seed)
        worst_name = max(per_param, key=per_param.get)
        e2e = {"max_rel_error": per_param[worst_name], "worst_parameter": worst_name,
               "tolerance": END_TO_END_TOLERANCE, "passed": per_param[worst_name] <= END_TO_END_TOLERANCE,
               "seconds": time.perf_counter() - t0, "per_parameter": per_param}
        if not e2e["passed"]:
            failed.append(f"end-to-end ({worst_name})")
    report = {"ops": table, "end_to_end": e2e, "failed": failed, "passed": not failed}
    if out is not None:
        out = _prepare_out(out)
        man = RunManifest("gradcheck", out, {"ops": ops, "end_to_end": end_to_end}, seed)
        write_json(out / "gradcheck.json", report)
        man.report(out / "gradcheck.json")
        man.write(passed=not failed)
    return report
