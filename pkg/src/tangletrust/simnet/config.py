"""Scenario configuration: a dataclass plus an INI reader and writer."""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Dict


class ConfigInvalid(ValueError):
    pass


class AttackKind(str, Enum):
    LIVENESS = "Liveness"
    SELF_PROMOTING = "SelfPromoting"
    WHITEWASHING = "Whitewashing"
    SLANDERING = "Slandering"
    NETWORK_DOS = "NetworkDoS"
    APP_DOS = "AppDoS"
    BALLOT_STUFFING = "BallotStuffing"
    SYBIL = "Sybil"
    REPLAY = "Replay"
    WEAKREQ_ABUSE = "WeakReqAbuse"


def default_mix() -> Dict[AttackKind, int]:
    return {k: 1 for k in AttackKind}


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_honest: int = 300
    n_malicious: int = 200
    n_evaluators: int = 100
    n_miners: int = 4
    duration_ticks: int = 400
    # relative share of the malicious cohort assigned to each attack kind
    attack_mix: Dict[AttackKind, int] = field(default_factory=default_mix)
    trust_threshold: float = 0.5
    protected: bool = True
    # ledger
    min_pow_bits: int = 4
    d: int = 8
    F: int = 4
    coinbase: int = 50
    onboarding_bits: int = 6
    onboarding_burn: int = 1
    # network and market
    max_latency: int = 3
    block_interval: int = 10
    endowment: int = 1000
    purchases: int = 4
    price_min: int = 5
    price_max: int = 20
    candidates: int = 3
    mediated_share: float = 0.2
    # adversary
    attacker_hash_share: float = 0.2
    attack_budget: int = 18
    sybils_per_actor: int = 3
    liveness_success_ticks: int = 50
    # weak devices
    n_devices: int = 5
    weakreq_fee: int = 100
    weakreq_n_msg: int = 10
    weakreq_burn: int = 10
    weakreq_timer_ticks: int = 10
    weakreq_escalation_factor: float = 2.0
    weakreq_escalation_max_attempts: int = 1
    min_share: int = 1

    def validate(self) -> "SimConfig":
        positive = ("n_honest", "n_miners", "duration_ticks", "max_latency", "block_interval", "purchases",
                    "price_min", "candidates", "weakreq_n_msg", "F", "d")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigInvalid(f"{name} must be positive")
        for name in ("n_malicious", "n_evaluators", "n_devices", "attack_budget", "sybils_per_actor", "seed"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be non-negative")
        if self.n_evaluators > self.n_honest:
            raise ConfigInvalid("n_evaluators must not exceed n_honest")
        if self.n_evaluators == 0:
            raise ConfigInvalid("at least one evaluator is needed")
        if not 0.0 <= self.trust_threshold <= 1.0:
            raise ConfigInvalid("trust_threshold must lie in [0, 1]")
        if not 0.0 <= self.attacker_hash_share < 1.0:
            raise ConfigInvalid("attacker_hash_share must lie in [0, 1)")
        if not 0.0 <= self.mediated_share <= 1.0:
            raise ConfigInvalid("mediated_share must lie in [0, 1]")
        if self.price_max < self.price_min:
            raise ConfigInvalid("price_max below price_min")
        if any(v < 0 for v in self.attack_mix.values()):
            raise ConfigInvalid("attack_mix weights must be non-negative")
        if self.n_malicious and not any(self.attack_mix.values()):
            raise ConfigInvalid("malicious nodes configured but attack_mix is empty")
        if self.F & (self.F - 1) or self.d <= self.F.bit_length() - 1:
            raise ConfigInvalid("F must be a power of two below 2**d")
        if self.weakreq_burn < self.weakreq_n_msg:
            raise ConfigInvalid("weakreq_burn below the per-message burn floor")
        return self

    def digest(self) -> str:
        return hashlib.sha3_256(to_ini(self).encode()).hexdigest()[:16]

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


_SECTIONS = {
    "ledger": ("min_pow_bits", "d", "F", "coinbase", "onboarding_bits", "onboarding_burn"),
    "weakreq": ("n_devices", "weakreq_fee", "weakreq_n_msg", "weakreq_burn", "weakreq_timer_ticks",
                "weakreq_escalation_factor", "weakreq_escalation_max_attempts", "min_share"),
}
# INI spellings under [weakreq]
_WEAKREQ_KEYS = {
    "weakreq_fee": "fee",
    "weakreq_n_msg": "n_msg",
    "weakreq_burn": "burn",
    "weakreq_timer_ticks": "timer_ticks",
    "weakreq_escalation_factor": "escalation.factor",
    "weakreq_escalation_max_attempts": "escalation.max_attempts",
    "n_devices": "devices",
    "min_share": "min_share",
}


def _parse(value: str, like):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def from_ini(text: str) -> SimConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid(str(exc)) from exc
    base = SimConfig()
    values = {}
    known = {f.name for f in fields(SimConfig)} - {"attack_mix"}
    reverse_weakreq = {v: k for k, v in _WEAKREQ_KEYS.items()}
    try:
        for section in parser.sections():
            for key, raw in parser.items(section):
                if section == "attack_mix":
                    continue
                if section == "weakreq":
                    name = reverse_weakreq.get(key)
                else:
                    name = key if key in known else None
                if name is None:
                    raise ConfigInvalid(f"unknown key [{section}] {key}")
                values[name] = _parse(raw, getattr(base, name))
        if parser.has_section("attack_mix"):
            mix = {k: 0 for k in AttackKind}
            for key, raw in parser.items("attack_mix"):
                try:
                    mix[AttackKind(key)] = int(raw)
                except ValueError as exc:
                    raise ConfigInvalid(f"bad attack_mix entry {key} = {raw}") from exc
            values["attack_mix"] = mix
    except ValueError as exc:
        if isinstance(exc, ConfigInvalid):
            raise
        raise ConfigInvalid(str(exc)) from exc
    return replace(base, **values).validate()


def load_config(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return from_ini(fh.read())


def to_ini(cfg: SimConfig) -> str:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    data = asdict(cfg)
    mix = data.pop("attack_mix")
    grouped = {name for names in _SECTIONS.values() for name in names}
    parser["scenario"] = {k: str(v) for k, v in data.items() if k not in grouped}
    parser["ledger"] = {k: str(data[k]) for k in _SECTIONS["ledger"]}
    parser["weakreq"] = {_WEAKREQ_KEYS[k]: str(data[k]) for k in _SECTIONS["weakreq"]}
    parser["attack_mix"] = {k.value: str(v) for k, v in sorted(mix.items(), key=lambda kv: kv[0].value)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
