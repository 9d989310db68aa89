"""Single entry point wiring all subcommands.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
failure. Structured logs go to standard error; results go to files or
standard output. Every run writes a JSON manifest next to its outputs
with the resolved configuration, seed and input digests.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import click

from . import __version__
from .checkpoint import config_from_dict, load_checkpoint, save_checkpoint
from .core import SPLITS, dataset_stats
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError, HkgxError, NumericError
from .evaluator import evaluate, export_embeddings
from .ingest import FORMATS, fact_to_canonical_line, load_dataset, write_canonical
from .model import TrainConfig
from .trainer import train
from .transform import VARIANTS, read_kg, recover, transform, verify_stats, write_kg

log = logging.getLogger("hkgx")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _setup_logging() -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(
        "%(asctime)s %(levelname)s %(name)s %(message)s", "%Y-%m-%dT%H:%M:%S"))
    root = logging.getLogger()
    if not root.handlers:
        root.addHandler(handler)
    root.setLevel(logging.INFO)


def _build_hash() -> str:
    h = hashlib.sha256()
    pkg = Path(__file__).parent
    for path in sorted(pkg.rglob("*.py")):
        h.update(path.read_bytes())
    return h.hexdigest()[:12]


def _digest_inputs(paths: list[Path]) -> dict[str, str]:
    out: dict[str, str] = {}
    for p in paths:
        files = sorted(x for x in p.rglob("*") if x.is_file()) if p.is_dir() else [p]
        for f in files:
            out[str(f)] = hashlib.sha256(f.read_bytes()).hexdigest()
    return out


def write_manifest(dest: Path, subcommand: str, config: dict,
                   seed: int | None, inputs: list[Path], started: float) -> None:
    manifest = {
        "subcommand": subcommand,
        "toolkit_version": __version__,
        "build_hash": _build_hash(),
        "seed": seed,
        "config": config,
        "inputs": _digest_inputs(inputs),
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=1)
        fh.write("\n")
    log.info("wrote manifest path=%s", dest)


def _resolve_seed(seed: int | None) -> int:
    if seed is None:
        seed = int.from_bytes(os.urandom(4), "little")
        log.info("seed not given, drew seed=%d", seed)
    return seed


@click.group(name="hkgx")
@click.version_option(__version__, message=f"hkgx, version {__version__} (build {_build_hash()})")
def cli() -> None:
    """Hyper-relational KG toolkit: transform, train, evaluate."""


@cli.command()
@click.option("--format", "fmt", type=click.Choice(FORMATS), required=True)
@click.option("--in", "in_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--skip-malformed", is_flag=True, help="Count and skip bad lines instead of failing.")
@click.option("--strict", is_flag=True, help="Reject entities first seen outside the train split.")
def ingest(fmt: str, in_dir: Path, out_dir: Path, skip_malformed: bool, strict: bool) -> None:
    """Parse a raw dataset directory into canonical interchange files."""
    started = time.time()
    ds = load_dataset(in_dir, fmt, skip_malformed=skip_malformed, strict_transductive=strict)
    write_canonical(ds, out_dir)
    stats = dataset_stats(ds)
    log.info("ingested: n_e=%d n_r=%d train=%d valid=%d test=%d",
             stats.n_e, stats.n_r, len(ds.train), len(ds.valid), len(ds.test))
    write_manifest(out_dir / "ingest.manifest.json", "ingest",
                   {"format": fmt, "skip_malformed": skip_malformed, "strict": strict},
                   None, [in_dir], started)


@cli.command("transform")
@click.option("--variant", type=click.Choice(VARIANTS), default="equivalent", show_default=True)
@click.option("--in", "in_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--out", "out_file", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--split", type=click.Choice(SPLITS + ("union",)), default="union", show_default=True)
@click.option("--verify/--no-verify", default=True, show_default=True,
              help="Check the exact size formulas after transforming.")
def transform_cmd(variant: str, in_dir: Path, out_file: Path, split: str, verify: bool) -> None:
    """Transform a canonical dataset into a triple KG (plus sidecar)."""
    started = time.time()
    ds = load_dataset(in_dir, "canonical")
    kg = transform(ds, variant, split=None if split == "union" else split)
    if verify:
        st = verify_stats(kg, ds)
        log.info("verified stats: nodes=%d relations=%d edge_emissions=%d unique_edges=%d",
                 st.node_count, st.relation_count, st.edge_emissions, st.unique_edge_count)
    write_kg(kg, out_file)
    log.info("transformed: variant=%s triples=%d mediators=%d",
             variant, len(kg.triples), kg.n_mediators)
    write_manifest(Path(str(out_file) + ".manifest.json"), "transform",
                   {"variant": variant, "split": split, "verify": verify},
                   None, [in_dir], started)


@cli.command("recover")
@click.option("--in", "in_file", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--no-provenance", is_flag=True,
              help="Ignore the sidecar's standalone-triple provenance.")
def recover_cmd(in_file: Path, out_dir: Path, no_provenance: bool) -> None:
    """Recover hyper-relational facts from an equivalent-transformed KG."""
    started = time.time()
    kg = read_kg(in_file)
    facts = recover(kg, use_provenance=not no_provenance)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "recovered.txt", "w", encoding="utf-8") as fh:
        for fact in facts:
            fh.write(fact_to_canonical_line(kg.entities, kg.relations, fact) + "\n")
    log.info("recovered facts=%d", len(facts))
    write_manifest(out_dir / "recover.manifest.json", "recover",
                   {"use_provenance": not no_provenance}, None, [in_file], started)


@cli.command("stats")
@click.option("--in", "in_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="canonical", show_default=True)
@click.option("--manifest", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Manifest path (default: stats.manifest.json in the working directory).")
def stats_cmd(in_dir: Path, fmt: str, manifest: Path | None) -> None:
    """Print dataset statistics to standard output."""
    started = time.time()
    ds = load_dataset(in_dir, fmt)
    rows = [("union", dataset_stats(ds))] + [(s, dataset_stats(ds, s)) for s in SPLITS]
    click.echo(f"entities: {rows[0][1].n_e}")
    click.echo(f"relations: {rows[0][1].n_r}")
    click.echo("scope    facts  plain  qualified  max_quals  primary_rels  qualifier_rels")
    for name, st in rows:
        click.echo(f"{name:<8} {st.n_facts:>6} {st.n_pri_facts:>6} {st.n_qua_facts:>10} "
                   f"{st.n_a:>10} {st.n_r_pri:>13} {st.n_r_qua:>15}")
    write_manifest(manifest or Path("stats.manifest.json"), "stats",
                   {"format": fmt}, None, [in_dir], started)


def parse_config_file(path: Path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_CONFIG_SECTIONS = {
    "encoder": EncoderConfig,
    "decoder": DecoderConfig,
    "train": TrainConfig,
}


def _coerce(value: str, typ) -> object:
    text = value.strip()
    if typ is bool or typ == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if typ is int:
        return int(text)
    if typ is float:
        return float(text)
    return text


def build_configs(raw: dict[str, str]) -> tuple[EncoderConfig, DecoderConfig, TrainConfig]:
    """Materialize the three config dataclasses from dotted flat keys."""
    sections: dict[str, dict] = {name: {} for name in _CONFIG_SECTIONS}
    for key, value in raw.items():
        if "." not in key:
            raise ConfigError(f"config key {key!r} must be '<section>.<field>' with "
                              f"section one of {tuple(_CONFIG_SECTIONS)}")
        section, name = key.split(".", 1)
        if section not in _CONFIG_SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in key {key!r}")
        cls = _CONFIG_SECTIONS[section]
        fields = {f.name: f for f in dataclasses.fields(cls)}
        if name not in fields:
            raise ConfigError(f"unknown {section} field {name!r}")
        ftype = fields[name].type
        if ftype in ("int", int):
            typ = int
        elif ftype in ("float", float, "float | None"):
            typ = float
        elif ftype in ("bool", bool):
            typ = bool
        else:
            typ = str
        sections[section][name] = _coerce(value, typ)
    enc = config_from_dict(EncoderConfig, sections["encoder"]) if sections["encoder"] else EncoderConfig()
    dec = config_from_dict(DecoderConfig, sections["decoder"]) if sections["decoder"] else DecoderConfig()
    trn = config_from_dict(TrainConfig, sections["train"]) if sections["train"] else TrainConfig()
    return enc, dec, trn


@cli.command("train")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="Flat key=value config file (encoder.* / decoder.* / train.*).")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="canonical", show_default=True)
@click.option("--out", "out_ckpt", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config key (repeatable); takes precedence over --config.")
@click.option("--seed", type=int, default=None, help="Overrides train.seed.")
@click.option("--curve", "curve_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Learning-curve CSV (default: <out>.curve.csv).")
def train_cmd(config_file: Path | None, data_dir: Path, fmt: str, out_ckpt: Path,
              overrides: tuple[str, ...], seed: int | None, curve_path: Path | None) -> None:
    """Train embeddings on a dataset and write the best checkpoint."""
    started = time.time()
    raw = parse_config_file(config_file) if config_file else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    enc_cfg, dec_cfg, train_cfg = build_configs(raw)
    if seed is not None:
        train_cfg.seed = seed
    elif "train.seed" not in raw:
        train_cfg.seed = _resolve_seed(None)
    ds = load_dataset(data_dir, fmt)
    if dec_cfg.flavor == "hype" and "decoder.max_positions" not in raw:
        dec_cfg.max_positions = max(dec_cfg.max_positions, 2 + ds.max_qualifiers)
    curve = curve_path or Path(str(out_ckpt) + ".curve.csv")
    ckpt = train(ds, enc_cfg, dec_cfg, train_cfg, curve_path=curve)
    save_checkpoint(ckpt, out_ckpt)
    log.info("saved checkpoint path=%s best_valid_mrr=%s step=%d",
             out_ckpt, ckpt.best_valid_mrr, ckpt.step)
    resolved = {
        "encoder": dataclasses.asdict(ckpt.enc_cfg),
        "decoder": dataclasses.asdict(ckpt.dec_cfg),
        "train": dataclasses.asdict(ckpt.train_cfg),
        "format": fmt,
    }
    write_manifest(Path(str(out_ckpt) + ".manifest.json"), "train", resolved,
                   ckpt.train_cfg.seed, [data_dir], started)


@cli.command("eval")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="canonical", show_default=True)
@click.option("--split", type=click.Choice(SPLITS), default="test", show_default=True)
@click.option("--out", "out_json", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--dump-ranks", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Also write one CSV row per (fact, position) query.")
@click.option("--threads", type=int, default=None, help="Query parallelism (default: all cores).")
def eval_cmd(ckpt_path: Path, data_dir: Path, fmt: str, split: str, out_json: Path,
             dump_ranks: Path | None, threads: int | None) -> None:
    """Filtered MRR / Hits@k of a checkpoint on one split."""
    started = time.time()
    ds = load_dataset(data_dir, fmt)
    ckpt = load_checkpoint(ckpt_path)
    report = evaluate(ckpt, ds, split, threads=threads or os.cpu_count() or 1)
    report.write_json(out_json)
    if dump_ranks is not None:
        report.write_ranks_csv(dump_ranks)
    agg = report.aggregates()
    log.info("evaluated: split=%s mrr=%s hits@1=%s hits@10=%s",
             split, agg["mrr"], agg["hits@1"], agg["hits@10"])
    write_manifest(Path(str(out_json) + ".manifest.json"), "eval",
                   {"split": split, "format": fmt}, ckpt.train_cfg.seed,
                   [data_dir, ckpt_path], started)


@cli.command("export-embeddings")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="canonical", show_default=True)
@click.option("--out", "out_tsv", type=click.Path(dir_okay=False, path_type=Path), required=True)
def export_cmd(ckpt_path: Path, data_dir: Path, fmt: str, out_tsv: Path) -> None:
    """Write encoded entity embeddings (originals and mediators) as TSV."""
    started = time.time()
    ds = load_dataset(data_dir, fmt)
    ckpt = load_checkpoint(ckpt_path)
    export_embeddings(ckpt, ds, out_tsv)
    log.info("exported embeddings path=%s", out_tsv)
    write_manifest(Path(str(out_tsv) + ".manifest.json"), "export-embeddings",
                   {"format": fmt}, ckpt.train_cfg.seed, [data_dir, ckpt_path], started)


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code discipline."""
    _setup_logging()
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Exit as exc:  # --help / --version
        return EXIT_OK if exc.exit_code == 0 else EXIT_USAGE
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except FileNotFoundError as exc:
        log.error("missing input: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except HkgxError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
