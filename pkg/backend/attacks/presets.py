"""
Named attack presets

ifgsm          plain targeted I-FGSM (no DI, TI, momentum or local branch)
dtmi-ce        DI + TI + MI with cross-entropy
dtmi-logit     DI + TI + MI with the logit loss
dtmi-ce-loc    dtmi-ce plus the local branch, without the similarity term
dtmi-ce-li     dtmi-ce plus local branch and feature similarity
dtmi-logit-li  dtmi-logit plus local branch and feature similarity
"""
from typing import Dict, Mapping, Optional

from pydantic import ValidationError

from attacks.engine import AttackConfig
from utils.errors import ConfigError


PRESETS: Dict[str, dict] = {
    "ifgsm": {"di_p": 0.0, "mu": 0.0, "ti_radius": 0, "lam": 0.0, "enable_local": False, "loss": "ce"},
    "dtmi-ce": {"lam": 0.0, "enable_local": False, "loss": "ce"},
    "dtmi-logit": {"lam": 0.0, "enable_local": False, "loss": "logit"},
    "dtmi-ce-loc": {"lam": 0.0, "enable_local": True, "loss": "ce"},
    "dtmi-ce-li": {"lam": 0.4, "enable_local": True, "loss": "ce"},
    "dtmi-logit-li": {"lam": 0.4, "enable_local": True, "loss": "logit"},
}


def _build(name, fields):
    fields = dict(fields)
    if "lambda" in fields:
        fields["lam"] = fields.pop("lambda")
    try:
        return AttackConfig(**fields)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"attack '{name}': {where}: {first['msg']}") from e


def preset_config(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"unknown attack '{name}' (presets: {', '.join(PRESETS)})")
    if "lambda" in overrides:
        overrides["lam"] = overrides.pop("lambda")
    return _build(name, {**PRESETS[name], **overrides})


def resolve_attack(name, custom: Optional[Mapping[str, Mapping]] = None, seed=None):
    """
    AttackConfig for a preset name or a custom entry {"base": preset, <field overrides>}

    `seed`, when given, replaces the attack's seed.
    """
    custom = custom or {}
    if name in custom:
        entry = dict(custom[name])
        base = entry.pop("base", None)
        if base is None:
            cfg = _build(name, entry)
        else:
            if base in custom and base != name:
                raise ConfigError(f"attack '{name}': base must be a preset, got custom '{base}'")
            cfg = preset_config(base, **entry)
    else:
        cfg = preset_config(name)
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": int(seed)})
    return cfg
