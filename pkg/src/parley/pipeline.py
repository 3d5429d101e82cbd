"""Campaign configuration and the resumable pipeline stages behind the CLI."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping

from .agent import (
    CallRequest,
    CallSession,
    Gateway,
    HttpGateway,
    NoiseConfig,
    SimulatorGateway,
    VirtualClock,
    build_agent_prompt,
    run_call,
)
from .evaluation import (
    ParticipantInput,
    aggregate,
    line_stats,
    render_question_csv,
    render_text,
    score_accuracy,
)
from .extraction import rule_based_extract, self_consistent_extract
from .llm import ChatClient, LLMConfig
from .storage import (
    RecordsClient,
    RunLayout,
    StubRecordsServer,
    flatten,
    read_json,
    write_json,
    write_atomic,
)
from .survey import ResponseSet, SurveyDefinition, load_survey, survey_from_json, survey_to_json
from .synth import (
    Persona,
    bundled_example,
    check_persona_coverage,
    default_plan,
    generate_persona,
    load_distribution,
    load_records,
    synthesize_survey,
)

log = logging.getLogger(__name__)

GROUPS = ("native", "non_native")
SIM_TOKEN = "local-simulation-token"


class ConfigError(ValueError):
    """Invalid or inconsistent campaign configuration (a usage error)."""


class StageError(RuntimeError):
    """A pipeline stage could not complete."""


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class Participant:
    id: str
    phone_number: str
    group: str = "native"


@dataclass
class GatewayConfig:
    mode: str = "simulate"
    base_url: str | None = None
    api_key_env: str = "PARLEY_AGENT_API_KEY"
    poll_interval_s: float = 5.0
    max_duration_s: int = 900
    voice_id: str | None = None
    webhook_url: str | None = None
    fields: dict[str, str] = field(default_factory=dict)
    status_map: dict[str, str] = field(default_factory=dict)


@dataclass
class ExtractionConfig:
    runs: int = 5
    extractor: str | None = None  # llm | rules; None picks by gateway mode
    llm: LLMConfig = field(default_factory=LLMConfig)


@dataclass
class StorageConfig:
    url: str | None = None
    token_env: str = "PARLEY_RECORDS_TOKEN"


@dataclass
class CampaignConfig:
    campaign_id: str
    participants: list[Participant]
    runs_dir: str = "runs"
    survey: str | None = None
    distributions: str | None = None
    records: str | None = None
    personas_per_participant: int = 5
    seed: int = 0
    parallelism: int = 1
    persona_renderer: str = "template"
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    storage: StorageConfig = field(default_factory=StorageConfig)
    fail_records: list[str] = field(default_factory=list)

    def check(self) -> "CampaignConfig":
        if not re.match(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$", self.campaign_id or ""):
            raise ConfigError(f"campaign_id {self.campaign_id!r} must be a simple name")
        if not self.participants:
            raise ConfigError("at least one participant is required")
        ids = [p.id for p in self.participants]
        if len(set(ids)) != len(ids):
            raise ConfigError("participant ids must be unique")
        for p in self.participants:
            if not re.match(r"^[A-Za-z0-9_.]+$", p.id):
                raise ConfigError(f"participant id {p.id!r} may only use letters, digits, '_' and '.'")
            if p.group not in GROUPS:
                raise ConfigError(f"participant {p.id}: group must be one of {GROUPS}")
        if self.personas_per_participant < 1:
            raise ConfigError("personas_per_participant must be at least 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        if self.extraction.runs < 1:
            raise ConfigError("extraction.runs must be at least 1")
        if self.gateway.mode not in ("http", "simulate"):
            raise ConfigError("gateway.mode must be 'http' or 'simulate'")
        if self.extraction.extractor not in (None, "llm", "rules"):
            raise ConfigError("extraction.extractor must be 'llm' or 'rules'")
        if self.persona_renderer not in ("template", "llm"):
            raise ConfigError("persona_renderer must be 'template' or 'llm'")
        return self

    @property
    def extractor(self) -> str:
        if self.extraction.extractor:
            return self.extraction.extractor
        return "rules" if self.gateway.mode == "simulate" else "llm"

    @property
    def layout(self) -> RunLayout:
        return RunLayout.for_campaign(self.runs_dir, self.campaign_id)

    def record_ids(self) -> list[tuple[str, Participant]]:
        return [
            (f"{self.campaign_id}-{p.id}-{j}", p)
            for p in self.participants
            for j in range(1, self.personas_per_participant + 1)
        ]


def _section(cls, doc: Mapping[str, Any] | None, where: str):
    doc = dict(doc or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    return doc


def config_from_json(doc: Mapping[str, Any], base_dir: str | Path = ".") -> CampaignConfig:
    """Build a config from its JSON document; relative paths resolve against ``base_dir``."""
    doc = _section(CampaignConfig, doc, "config")
    base = Path(base_dir)
    try:
        participants = [Participant(**p) for p in doc.pop("participants", [])]
        ext = _section(ExtractionConfig, doc.pop("extraction", None), "extraction")
        llm = LLMConfig.from_json(ext.pop("llm", None))
        cfg = CampaignConfig(
            participants=participants,
            gateway=GatewayConfig(**_section(GatewayConfig, doc.pop("gateway", None), "gateway")),
            noise=NoiseConfig.from_json(doc.pop("noise", None)),
            extraction=ExtractionConfig(llm=llm, **ext),
            storage=StorageConfig(**_section(StorageConfig, doc.pop("storage", None), "storage")),
            **doc,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from None
    for name in ("runs_dir", "survey", "distributions", "records"):
        value = getattr(cfg, name)
        if value and not value.startswith("builtin:") and not Path(value).is_absolute():
            setattr(cfg, name, str(base / value))
    return cfg.check()


def load_config(path: str | Path) -> CampaignConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_json(doc, path.parent)


def with_overrides(cfg: CampaignConfig, seed=None, parallelism=None, mode=None, extractor=None) -> CampaignConfig:
    cfg = replace(cfg)
    if seed is not None:
        cfg.seed = seed
    if parallelism is not None:
        cfg.parallelism = parallelism
    if mode is not None:
        cfg.gateway = replace(cfg.gateway, mode=mode)
    if extractor is not None:
        cfg.extraction = replace(cfg.extraction, extractor=extractor)
    return cfg.check()


# -- shared helpers ----------------------------------------------------------

Printer = Callable[[str], None]


def _survey(cfg: CampaignConfig) -> SurveyDefinition:
    layout = cfg.layout
    if layout.survey.exists():
        return survey_from_json(read_json(layout.survey))
    return load_survey(cfg.survey)


def _require(path: Path, stage: str, what: str) -> None:
    if not path.exists() or (path.is_dir() and not any(path.glob("*.json"))):
        raise StageError(f"{what} not found under {path}; run `parley {stage}` first")


def _load_persona(cfg: CampaignConfig, rid: str) -> Persona:
    return Persona.from_json(read_json(cfg.layout.persona(rid)))


def _pool_map(fn, items, parallelism: int):
    if parallelism <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))


# -- stages ------------------------------------------------------------------


def stage_synth(cfg: CampaignConfig, out: Printer = print) -> dict:
    """Synthesize gold response sets and personas for every participant slot."""
    survey = _survey(cfg)
    plan = default_plan(survey)
    uses = set(plan.values())
    dist = None
    if "probability_based" in uses or "consistent" in uses:
        dist_path = Path(cfg.distributions) if cfg.distributions else bundled_example("distributions")
        if not dist_path.exists():
            raise StageError(f"distribution file not found: {dist_path}")
        dist = load_distribution(dist_path)
        dist.check_against(survey)
    records = None
    if "consistent" in uses:
        rec_path = Path(cfg.records) if cfg.records else bundled_example("records")
        if not rec_path.exists():
            raise StageError(f"respondent records file not found: {rec_path}")
        records = load_records(rec_path, survey)
    renderer: Any = "template"
    if cfg.persona_renderer == "llm":
        try:
            renderer = ChatClient(cfg.extraction.llm)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    layout = cfg.layout.create()
    if not layout.survey.exists():
        write_json(layout.survey, survey_to_json(survey))
    made = skipped = 0
    uncovered: dict[str, list[int]] = {}
    for rid, _ in cfg.record_ids():
        path = layout.persona(rid)
        if path.exists():
            skipped += 1
            persona = _load_persona(cfg, rid)
        else:
            gold = synthesize_survey(survey, plan, dist, records, cfg.seed, respondent_id=rid)
            persona = generate_persona(gold, survey, renderer, seed=cfg.seed, persona_id=rid)
            write_json(path, persona.to_json())
            made += 1
        missing = check_persona_coverage(persona, persona.source, survey)
        if missing:
            uncovered[rid] = missing
    total = made + skipped
    out(f"synth: {made} personas written, {skipped} already present ({total} gold response sets)")
    out(f"coverage: {total - len(uncovered)}/{total} personas state every answer")
    for rid, missing in sorted(uncovered.items()):
        out(f"  {rid}: check questions {missing}")
    return {"written": made, "skipped": skipped, "uncovered": uncovered}


def _gateway(cfg: CampaignConfig, survey: SurveyDefinition) -> Gateway:
    if cfg.gateway.mode == "http":
        g = cfg.gateway
        if not g.base_url:
            raise ConfigError("gateway.base_url is required in http mode")
        try:
            return HttpGateway(g.base_url, api_key_env=g.api_key_env, fields=g.fields, status_map=g.status_map)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    _require(cfg.layout.dir("personas"), "synth", "personas")
    scripts = {rid: _load_persona(cfg, rid).source for rid, _ in cfg.record_ids()
               if cfg.layout.persona(rid).exists()}
    return SimulatorGateway(survey, scripts, cfg.noise, cfg.seed, fail_records=set(cfg.fail_records))


def stage_run(cfg: CampaignConfig, out: Printer = print) -> dict:
    """Place every call, poll each to a terminal state and archive the session."""
    survey = _survey(cfg)
    layout = cfg.layout.create()
    gateway = _gateway(cfg, survey)
    prompt = build_agent_prompt(survey)
    pending = []
    done = 0
    for rid, p in cfg.record_ids():
        path = layout.call(rid)
        if path.exists() and read_json(path).get("status") == "completed":
            done += 1
            continue
        pending.append((rid, p))
    simulated = cfg.gateway.mode == "simulate"

    def worker(jobs: list[tuple[str, Participant]]) -> list[CallSession]:
        clock = VirtualClock() if simulated else None
        sessions = []
        for rid, p in jobs:
            req = CallRequest(
                phone_number=p.phone_number,
                agent_prompt=prompt,
                max_duration_s=cfg.gateway.max_duration_s,
                voice_id=cfg.gateway.voice_id,
                webhook_url=cfg.gateway.webhook_url,
                metadata={"record_id": rid, "participant": p.id, "campaign": cfg.campaign_id},
            )
            try:
                kw = {"clock": clock.now, "sleep": clock.sleep} if clock else {}
                session = run_call(gateway, req, cfg.gateway.poll_interval_s, cfg.gateway.max_duration_s, **kw)
            except Exception as exc:  # one bad call must not stop the campaign
                log.warning("call for %s failed: %s", rid, exc)
                session = CallSession(call_id="", status="failed", error=str(exc), metadata=dict(req.metadata))
            write_json(layout.call(rid), session.to_json())
            sessions.append(session)
        return sessions

    n_workers = min(cfg.parallelism, max(1, len(pending)))
    shards = [pending[w::n_workers] for w in range(n_workers)]
    results = [s for shard in _pool_map(worker, shards, n_workers) for s in shard]
    failed = 0
    cost = 0.0
    for s in sorted(results, key=lambda s: s.metadata.get("record_id", "")):
        rid = s.metadata.get("record_id", "?")
        note = f" ({s.error})" if s.error else ""
        out(f"call {rid}: {s.status}{note}")
        failed += s.status != "completed"
        cost += s.cost_usd or 0.0
    out(f"run: {len(results) - failed} completed, {failed} failed, {done} already archived; "
        f"total cost ${cost:.2f}")
    if results and failed * 2 > len(results):
        raise StageError(f"{failed} of {len(results)} calls failed")
    return {"completed": len(results) - failed, "failed": failed, "skipped": done, "cost_usd": cost}


def _completed_calls(cfg: CampaignConfig) -> dict[str, CallSession]:
    _require(cfg.layout.dir("calls"), "run", "call archives")
    calls = {}
    for rid, _ in cfg.record_ids():
        path = cfg.layout.call(rid)
        if path.exists():
            s = CallSession.from_json(read_json(path))
            if s.status == "completed":
                calls[rid] = s
    return calls


def stage_extract(cfg: CampaignConfig, out: Printer = print, client=None) -> dict:
    """Derive a response set from each completed call not yet extracted."""
    survey = _survey(cfg)
    layout = cfg.layout.create()
    calls = _completed_calls(cfg)
    pending = [rid for rid in calls if not layout.extraction(rid).exists()]
    mode = cfg.extractor
    if mode == "llm" and pending and client is None:
        try:
            client = ChatClient(cfg.extraction.llm)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def one(rid: str) -> str | None:
        transcript = calls[rid].transcript
        try:
            if mode == "rules":
                rs = rule_based_extract(survey, transcript, respondent_id=rid)
                doc = {"record_id": rid, "extractor": "rules", "answers": rs.to_json()}
            else:
                res = self_consistent_extract(client, survey, transcript, cfg.extraction.runs, respondent_id=rid)
                doc = {"record_id": rid, "extractor": "llm", **res.to_json()}
        except Exception as exc:
            log.warning("extraction for %s failed: %s", rid, exc)
            return f"{rid}: {exc}"
        write_json(layout.extraction(rid), doc)
        return None

    errors = [e for e in _pool_map(one, pending, cfg.parallelism) if e]
    out(f"extract ({mode}): {len(pending) - len(errors)} extracted, {len(calls) - len(pending)} already done, "
        f"{len(errors)} failed")
    for e in errors:
        out(f"  {e}")
    if pending and len(errors) * 2 > len(pending):
        raise StageError(f"{len(errors)} of {len(pending)} extractions failed")
    return {"extracted": len(pending) - len(errors), "skipped": len(calls) - len(pending), "failed": len(errors)}


def _predictions(cfg: CampaignConfig) -> dict[str, ResponseSet]:
    _require(cfg.layout.dir("extractions"), "extract", "extractions")
    preds = {}
    for rid, _ in cfg.record_ids():
        path = cfg.layout.extraction(rid)
        if path.exists():
            preds[rid] = ResponseSet.from_json(read_json(path)["answers"])
    return preds


def respondent_pairs(session: CallSession) -> list[tuple[str, str]]:
    """Reference/hypothesis respondent lines of an archived call.

    Turns pair up one to one when both sides have the same number of
    respondent turns; otherwise each side is scored as a single line.
    """
    ref = session.reference.respondent_lines()
    hyp = session.transcript.respondent_lines()
    if len(ref) == len(hyp):
        return list(zip(ref, hyp))
    return [(" ".join(ref), " ".join(hyp))]


def stage_score(cfg: CampaignConfig, out: Printer = print) -> dict:
    """Score extractions against gold and transcripts against references."""
    survey = _survey(cfg)
    layout = cfg.layout.create()
    preds = _predictions(cfg)
    calls = _completed_calls(cfg)
    inputs = []
    for p in cfg.participants:
        item = ParticipantInput(p.id)
        for rid, owner in cfg.record_ids():
            if owner.id != p.id:
                continue
            if rid in preds and layout.persona(rid).exists():
                gold = _load_persona(cfg, rid).source
                item.correctness[rid] = score_accuracy(gold, preds[rid], survey)
            s = calls.get(rid)
            if s is not None and s.reference is not None:
                item.wer_lines.extend(line_stats(respondent_pairs(s)))
        if item.correctness or item.wer_lines:
            inputs.append(item)
    if not inputs:
        raise StageError("nothing to score; run `parley extract` first")
    report = aggregate(inputs, {p.id: p.group for p in cfg.participants})
    text = render_text(report)
    write_json(layout.report("evaluation.json"), report.to_json())
    write_atomic(layout.report("tables.txt"), text)
    if report.accuracy:
        write_atomic(layout.report("questions.csv"), render_question_csv(report.accuracy))
    out(text.rstrip("\n"))
    return report.to_json()


def stage_upload(cfg: CampaignConfig, out: Printer = print, client: RecordsClient | None = None) -> dict:
    """Flatten extracted response sets and import them into the records store."""
    survey = _survey(cfg)
    preds = _predictions(cfg)
    records = [flatten(rs, survey, record_id=rid) for rid, rs in sorted(preds.items())]
    if client is None:
        if not cfg.storage.url:
            raise StageError("storage.url is not configured")
        try:
            client = RecordsClient(cfg.storage.url, token_env=cfg.storage.token_env)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    count = client.upload(records)
    write_json(cfg.layout.create().report("upload.json"), {"records": len(records), "acknowledged": count})
    out(f"upload: {count} of {len(records)} records acknowledged")
    if count != len(records):
        raise StageError(f"server acknowledged {count} of {len(records)} records")
    return {"records": len(records), "acknowledged": count}


def stage_simulate(cfg: CampaignConfig, out: Printer = print) -> dict:
    """Offline end to end: synth, run, extract, score and upload to a local stub."""
    if cfg.gateway.mode != "simulate":
        cfg = with_overrides(cfg, mode="simulate")
    summary = {
        "synth": stage_synth(cfg, out),
        "run": stage_run(cfg, out),
        "extract": stage_extract(cfg, out),
        "score": stage_score(cfg, out),
    }
    with StubRecordsServer(SIM_TOKEN) as server:
        client = RecordsClient(server.url, token=SIM_TOKEN)
        try:
            summary["upload"] = stage_upload(cfg, out, client)
        finally:
            client.close()
    return summary


STAGES = {
    "synth": stage_synth,
    "run": stage_run,
    "extract": stage_extract,
    "score": stage_score,
    "upload": stage_upload,
    "simulate": stage_simulate,
}

__all__ = [
    "CampaignConfig",
    "ConfigError",
    "StageError",
    "STAGES",
    "config_from_json",
    "load_config",
    "with_overrides",
]

