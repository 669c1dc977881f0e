"""Deterministic synthetic corpora of labeled behavioral reports.

The default configuration mirrors the shape of a desk-scale ransomware
corpus: 942 goodware samples and 582 ransomware samples spread over eleven
families.  A small set of *core* tokens is shared by all ransomware
families, each family gets a few private tokens, and everything else is
class-independent background.  Which tokens carry signal is written to a
separate plantation record and never appears inside the reports.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidConfig
from .featurize import FEATURE_CLASSES, class_group
from .ingest import BehavioralReport, DIR_OPS, FILE_OPS, write_report

MODES = ("shared-core", "disjoint")

DEFAULT_FAMILIES = (
    ("Citroni", 50),
    ("CryptLocker", 107),
    ("CryptoWall", 46),
    ("Kollah", 25),
    ("Kovter", 64),
    ("Locker", 97),
    ("Matsnu", 59),
    ("Pgpcoder", 4),
    ("Reveton", 90),
    ("TeslaCrypt", 6),
    ("Trojan-Ransom", 34),
)

# 5000 tokens in total
DEFAULT_VOCAB_SIZES = {
    "api": 600,
    **{f"reg:{op}": 500 for op in FILE_OPS},
    **{f"file:{op}": 200 for op in FILE_OPS},
    **{f"ext:{op}": 50 for op in FILE_OPS},
    **{f"dir:{op}": 200 for op in DIR_OPS},
    "drop": 50,
    "str": 950,
}

# share of signal tokens per report section, roughly the ranking of
# informative sections observed on real ransomware traces
_SIGNAL_WEIGHTS = {"reg": 0.48, "api": 0.24, "str": 0.08, "ext": 0.08, "file": 0.06, "dir": 0.04, "drop": 0.02}


@dataclass(frozen=True)
class FamilySpec:
    name: str
    n_samples: int


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_goodware: int = 942
    families: tuple[FamilySpec, ...] = tuple(FamilySpec(n, c) for n, c in DEFAULT_FAMILIES)
    vocab_sizes: dict = field(default_factory=lambda: dict(DEFAULT_VOCAB_SIZES))
    n_core_signal: int = 50
    n_family_signal: int = 8
    p_signal_ransomware: float = 0.9
    p_signal_goodware: float = 0.1
    background_density: float = 0.02
    mode: str = "shared-core"
    # >0 ties this many core tokens to one shared latent bit (correlated
    # evidence); the remaining core tokens stay independent
    core_block_size: int = 0
    core_flip: float = 0.05

    def validate(self) -> None:
        for name in ("p_signal_ransomware", "p_signal_goodware", "background_density", "core_flip"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidConfig(f"{name}={value} is not a probability")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}")
        if self.core_block_size > self.n_core_signal:
            raise InvalidConfig("core_block_size cannot exceed n_core_signal")
        counts = [self.n_goodware, self.n_core_signal, self.n_family_signal, self.core_block_size]
        counts += [f.n_samples for f in self.families]
        counts += list(self.vocab_sizes.values())
        if any(c < 0 for c in counts):
            raise InvalidConfig("counts must be non-negative")
        names = [f.name for f in self.families]
        if len(set(names)) != len(names):
            raise InvalidConfig("family names must be unique")
        unknown = set(self.vocab_sizes) - set(FEATURE_CLASSES)
        if unknown:
            raise InvalidConfig(f"unknown feature classes {sorted(unknown)}")
        if self.vocab_sizes.get("api", 0) < 1:
            raise InvalidConfig("at least one api token is required")
        for cls, size in self.vocab_sizes.items():
            if size > len(token_pool(cls, size)):
                raise InvalidConfig(f"cannot build {size} distinct tokens for {cls}")
        n_signal = self._n_signal_needed()
        if n_signal > sum(self.vocab_sizes.values()):
            raise InvalidConfig("more signal tokens requested than vocabulary entries")

    def _n_signal_needed(self) -> int:
        per_family = self.n_family_signal + (self.n_core_signal if self.mode == "disjoint" else 0)
        core = self.n_core_signal if self.mode == "shared-core" else 0
        return core + per_family * len(self.families)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["families"] = [asdict(f) for f in self.families]
        return doc


# ---------------------------------------------------------------------------
# token pools
# ---------------------------------------------------------------------------

_API_REAL = [
    "cryptacquirecontexta", "cryptacquirecontextw", "cryptgenkey", "cryptencrypt", "cryptdecrypt",
    "cryptexportkey", "cryptimportkey", "cryptgenrandom", "crypthashdata", "cryptcreatehash",
    "findfirstfileexw", "findnextfilew", "movefileexw", "movefilewithprogressw", "deletefilew",
    "setfileattributesw", "ntcreatefile", "ntwritefile", "ntreadfile", "ntopenfile", "ntdeletefile",
    "openprocess", "writeprocessmemory", "createremotethread", "terminateprocess", "ntterminateprocess",
    "getlogicaldrives", "getdrivetypew", "getvolumeinformationw", "shellexecuteexw", "createprocessinternalw",
    "ntallocatevirtualmemory", "ntprotectvirtualmemory", "ldrloaddll", "ldrgetprocedureaddress",
    "regsetvalueexa", "regsetvalueexw", "regcreatekeyexw", "regopenkeyexw", "regqueryvalueexw",
    "regdeletevaluew", "internetopena", "internetopenurla", "getcomputernamew", "getusernamew",
    "isdebuggerpresent", "getsystemtimeasfiletime", "ntdelayexecution", "process32nextw", "setwindowshookexa",
]
_API_PREFIX = ["nt", "zw", "rtl", "ldr", "get", "set", "create", "open", "query", "enum", "close", "read", "write"]
_API_NOUN = [
    "file", "key", "value", "process", "thread", "section", "event", "mutant", "token", "object",
    "window", "module", "service", "driver", "timer", "pipe", "port", "heap", "memory", "volume",
]
_API_SUFFIX = ["", "a", "w", "ex", "exa", "exw", "information", "attributes"]

_HIVES = ["hklm", "hkcu", "hku\\.default", "hkcr"]
_REG_ROOTS = [
    "software\\microsoft\\windows\\currentversion\\run",
    "software\\microsoft\\windows\\currentversion\\runonce",
    "software\\microsoft\\windows\\currentversion\\explorer\\recentdocs",
    "software\\microsoft\\windows\\currentversion\\explorer\\mountpoints2",
    "software\\microsoft\\windows\\currentversion\\policies\\system",
    "software\\microsoft\\cryptography\\rng",
    "software\\microsoft\\systemcertificates\\my",
    "system\\currentcontrolset\\services",
    "system\\mounteddevices",
    "software\\classes\\clsid",
    "software\\policies\\microsoft\\windows\\safer",
    "software\\microsoft\\windows nt\\currentversion\\winlogon",
]
_REG_LEAVES = [
    "shell", "userinit", "enablelua", "seed", "blob", "start", "imagepath", "type", "default",
    "inprocserver32", "threadingmodel", "version", "installdate", "path", "config", "state",
]
_REG_VENDORS = ["vendor%02d" % i for i in range(40)]

_DOC_DIRS = [
    "c:\\documents and settings\\user\\my documents",
    "c:\\documents and settings\\user\\desktop",
    "c:\\documents and settings\\user\\local settings\\temp",
    "c:\\documents and settings\\all users\\application data",
    "c:\\windows\\system32",
    "c:\\windows\\temp",
    "c:\\program files\\common files",
    "c:\\documents and settings\\user\\my documents\\my pictures",
]
_FILE_STEMS = ["report", "invoice", "photo", "holiday", "budget", "notes", "readme", "setup", "data", "backup",
               "decrypt_instructions", "help_restore", "config", "cache", "log", "update"]

_EXTENSIONS = [
    "doc", "docx", "xls", "xlsx", "ppt", "pptx", "pdf", "txt", "rtf", "odt", "jpg", "jpeg", "png", "gif",
    "bmp", "tif", "psd", "zip", "rar", "7z", "tar", "gz", "mp3", "mp4", "avi", "wav", "mov", "sql", "mdb",
    "accdb", "db", "csv", "xml", "html", "htm", "js", "bat", "cmd", "ps1", "vbs", "exe", "dll", "sys", "ini",
    "cfg", "log", "tmp", "manifest", "pad", "lnk", "key", "crt", "pem", "pfx", "bak", "dat", "wallet",
    "encrypted", "locky", "crypt",
]

_DROP_REAL = [
    "pe32 executable", "pe32 dll", "dos batch file", "jpeg image data", "png image data", "html document",
    "rich text format", "ascii text", "utf-16 unicode text", "ms windows shortcut", "zip archive",
    "xml document", "visual basic script", "windows registry text", "data",
]

_DLLS = ["advapi32.dll", "kernel32.dll", "user32.dll", "shell32.dll", "crypt32.dll", "msvbvm60.dll",
         "wininet.dll", "ws2_32.dll", "ole32.dll", "ntdll.dll", "shlwapi.dll", "gdi32.dll", "comctl32.dll",
         "rsaenh.dll", "bcrypt.dll", "netapi32.dll", "psapi.dll", "urlmon.dll", "mpr.dll", "version.dll"]
_CRYPTO_STRINGS = ["aes", "rsa", "rsa2048", "aes256", "sha256", "md5", "bitcoin", "private key", "public key",
                   "-----begin public key-----", "decrypt", "encrypted", "ransom", "tor browser", ".onion"]


def _unique(tokens):
    seen = set()
    for t in tokens:
        if t not in seen:
            seen.add(t)
            yield t


def _api_tokens():
    yield from _API_REAL
    for p, n, s in itertools.product(_API_PREFIX, _API_NOUN, _API_SUFFIX):
        yield f"{p}{n}{s}"


def _registry_tokens(op: str):
    roots = _REG_ROOTS[hash_index(op) % len(_REG_ROOTS):] + _REG_ROOTS[: hash_index(op) % len(_REG_ROOTS)]
    for hive, root, leaf in itertools.product(_HIVES, roots, _REG_LEAVES):
        yield f"{hive}\\{root}\\{leaf}"
    for hive, vendor, leaf in itertools.product(_HIVES, _REG_VENDORS, _REG_LEAVES):
        yield f"{hive}\\software\\{vendor}\\{leaf}"


def _file_tokens(op: str):
    for d, stem, ext in itertools.product(_DOC_DIRS, _FILE_STEMS, _EXTENSIONS):
        yield f"{d}\\{stem}.{ext}"


def _dir_tokens(op: str):
    yield from _DOC_DIRS
    for d, sub in itertools.product(_DOC_DIRS, _FILE_STEMS + _REG_VENDORS):
        yield f"{d}\\{sub}"


def _drop_tokens():
    yield from _DROP_REAL
    for i in range(1000):
        yield f"data type {i:03d}"


def _string_tokens():
    yield from _DLLS
    yield from _CRYPTO_STRINGS
    yield from (f".{e}" for e in _EXTENSIONS)
    for dll, noun in itertools.product(_DLLS, _API_NOUN):
        yield f"{dll[:-4]}!{noun}"
    for p, n, s in itertools.product(_API_PREFIX, _API_NOUN, _API_SUFFIX):
        yield f"import:{p}{n}{s}"


def hash_index(text: str) -> int:
    """Small stable hash (unlike ``hash``, independent of PYTHONHASHSEED)."""
    return sum(ord(ch) * (i + 1) for i, ch in enumerate(text))


def token_pool(feature_class: str, size: int) -> list[str]:
    head, _, op = feature_class.partition(":")
    source = {
        "api": lambda: _api_tokens(),
        "reg": lambda: _registry_tokens(op),
        "file": lambda: _file_tokens(op),
        "ext": lambda: iter(_EXTENSIONS),
        "dir": lambda: _dir_tokens(op),
        "drop": lambda: _drop_tokens(),
        "str": lambda: _string_tokens(),
    }[head]()
    return list(itertools.islice(_unique(source), size))


# ---------------------------------------------------------------------------
# plantation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Plantation:
    core: tuple[str, ...]
    family: dict  # family name -> tuple of feature names
    background: tuple[str, ...]
    core_blocks: tuple[tuple[str, ...], ...] = ()

    def to_dict(self) -> dict:
        return {
            "core": list(self.core),
            "core_blocks": [list(b) for b in self.core_blocks],
            "family": {k: list(v) for k, v in self.family.items()},
            "n_background": len(self.background),
        }


def _allocate(n: int, classes: list[str], sizes: dict) -> dict[str, int]:
    """Split ``n`` signal slots across classes by section weight (largest remainder)."""
    weights = np.array([_SIGNAL_WEIGHTS[class_group(c)] / sum(
        1 for d in classes if class_group(d) == class_group(c)) for c in classes])
    weights = weights / weights.sum()
    raw = weights * n
    alloc = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - alloc), kind="stable")[: n - alloc.sum()]:
        alloc[i] += 1
    return {c: int(a) for c, a in zip(classes, alloc)}


def plant(config: SynthConfig) -> Plantation:
    config.validate()
    rng = np.random.default_rng([config.seed, 0xC0DE])
    classes = [c for c in FEATURE_CLASSES if config.vocab_sizes.get(c, 0) > 0]
    free = {c: [f"{c}:{t}" for t in token_pool(c, config.vocab_sizes[c])] for c in classes}
    for c in classes:
        rng.shuffle(free[c])

    def take(n: int) -> list[str]:
        wanted = _allocate(n, classes, config.vocab_sizes)
        out = []
        # spill over when a class runs out of tokens
        shortfall = 0
        for c in classes:
            k = min(wanted[c], len(free[c]))
            shortfall += wanted[c] - k
            out += [free[c].pop() for _ in range(k)]
        for c in classes:
            while shortfall and free[c]:
                out.append(free[c].pop())
                shortfall -= 1
        return sorted(out)

    core = take(config.n_core_signal) if config.mode == "shared-core" else []
    per_family = config.n_family_signal + (config.n_core_signal if config.mode == "disjoint" else 0)
    family = {f.name: tuple(take(per_family)) for f in config.families}
    background = tuple(sorted(t for c in classes for t in free[c]))
    blocks: tuple = ()
    if config.core_block_size > 0 and core:
        shuffled = list(core)
        rng.shuffle(shuffled)
        blocks = (tuple(sorted(shuffled[: config.core_block_size])),)
    return Plantation(tuple(core), family, background, blocks)


# ---------------------------------------------------------------------------
# sample generation
# ---------------------------------------------------------------------------


def _report_from_features(sample_id: str, label: str, family: Optional[str], names: set[str]) -> BehavioralReport:
    api = set()
    ops = {"reg": {op: set() for op in FILE_OPS}, "file": {op: set() for op in FILE_OPS},
           "ext": {op: set() for op in FILE_OPS}, "dir": {op: set() for op in DIR_OPS}}
    drop, strings = set(), set()
    for name in names:
        head, _, rest = name.partition(":")
        if head == "api":
            api.add(rest)
        elif head == "drop":
            drop.add(rest)
        elif head == "str":
            strings.add(rest)
        else:
            op, _, token = rest.partition(":")
            ops[head][op].add(token)

    def freeze(m):
        return {k: frozenset(v) for k, v in m.items()}

    return BehavioralReport(
        sample_id=sample_id, label=label, family=family, api_calls=frozenset(api),
        registry_ops=freeze(ops["reg"]), file_ops=freeze(ops["file"]), extension_ops=freeze(ops["ext"]),
        directory_ops=freeze(ops["dir"]), dropped_file_types=frozenset(drop), strings=frozenset(strings),
    )


def _sample_signal(rng, tokens, p: float, blocks=(), flip: float = 0.0) -> list[str]:
    in_block = {t for block in blocks for t in block}
    free = [t for t in tokens if t not in in_block]
    hits = rng.random(len(free)) < p
    out = [t for t, h in zip(free, hits) if h]
    for block in blocks:
        on = rng.random() < p
        flips = rng.random(len(block)) < flip
        out += [t for t, f in zip(block, flips) if on != f]
    return out


def generate(config: SynthConfig = SynthConfig()) -> tuple[list[BehavioralReport], Plantation]:
    """Labeled, family-tagged reports plus the ground-truth plantation record.

    Sample ``i`` draws from its own random stream keyed by ``(seed, i)`` so
    output does not depend on generation order.
    """
    plantation = plant(config)
    background = plantation.background
    api_background = [t for t in background if t.startswith("api:")]
    specs: list[tuple[str, Optional[str]]] = [("goodware", None)] * config.n_goodware
    for fam in config.families:
        specs += [("ransomware", fam.name)] * fam.n_samples

    p_hi, p_lo = config.p_signal_ransomware, config.p_signal_goodware
    reports = []
    for i, (label, family) in enumerate(specs):
        rng = np.random.default_rng([config.seed, 1, i])
        p_core = p_hi if label == "ransomware" else p_lo
        names = set(_sample_signal(rng, plantation.core, p_core, plantation.core_blocks, config.core_flip))
        for fam_name, tokens in plantation.family.items():
            p = p_hi if fam_name == family else p_lo
            names.update(_sample_signal(rng, tokens, p))
        hits = rng.random(len(background)) < config.background_density
        names.update(t for t, h in zip(background, hits) if h)
        if not any(n.startswith("api:") for n in names):
            pool = api_background or [t for t in plantation.core if t.startswith("api:")] or ["api:ntclose"]
            names.add(pool[int(rng.integers(len(pool)))])
        reports.append(_report_from_features(f"s{i:05d}", label, family, names))
    return reports, plantation


def manifest_csv(reports: list[BehavioralReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", "label", "family"])
    for r in reports:
        writer.writerow([r.sample_id, r.label, r.family or ""])
    return buf.getvalue()


def write_corpus(config: SynthConfig, directory) -> tuple[list[BehavioralReport], Plantation]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    reports, plantation = generate(config)
    for report in reports:
        write_report(report, out)
    (out / "plantation.json").write_text(
        json.dumps({"config": config.to_dict(), **plantation.to_dict()}, indent=1, sort_keys=True) + "\n",
        encoding="utf-8", newline="\n",
    )
    (out / "manifest.csv").write_text(manifest_csv(reports), encoding="utf-8", newline="\n")
    return reports, plantation


def load_plantation(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
