"""Staged corpus curation: physchem gate, structural rules, Lipinski box, diversity.

Rules are applied in a fixed short-circuit order; a molecule is charged to
the first stage it fails, so per-stage counts are reproducible and the
report always reconciles input = accepted + rejected + parse failures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .chem import (ChemError, DescriptorSet, Fingerprint, ParsedMol,
                   descriptors, fingerprint, tanimoto, try_parse)
from .oracle import surrogate_qed, surrogate_sa

STAGES = ("physchem", "structural", "lipinski", "diversity")

# Substring motifs rejected outright (reactive/assay-interfering groups).
DEFAULT_BANNED_PATTERNS = ("N=[N+]=[N-]", "N=Nc", "C(=S)S")


@dataclass(frozen=True)
class CurationConfig:
    qed_min: float = 0.5  # reject when qed <= qed_min
    sa_max: float = 5.0  # reject when sa >= sa_max
    banned_elements: frozenset = frozenset(("Si", "Sn"))
    bridgehead_max: int = 2
    max_ring: int = 8
    rot_max: int = 10
    tpsa_max: float = 140.0
    banned_patterns: tuple = DEFAULT_BANNED_PATTERNS
    logp_max: float = 5.0
    mw_range: tuple = (100.0, 500.0)
    hbd_max: int = 5
    hba_max: int = 10
    tanimoto_max: float = 0.5
    heavy_range: tuple = (4, 49)
    fp_width: int = 2048


@dataclass(frozen=True)
class Reject:
    stage: str
    rule: str


def classify(mol: ParsedMol, d: DescriptorSet, qed: float, sa: float,
             cfg: CurationConfig) -> Reject | None:
    """First violated rule across the three per-molecule stages, else None.

    Diversity is corpus-level state and lives in curate_stream.
    """
    if qed <= cfg.qed_min or sa >= cfg.sa_max:
        return Reject("physchem", "qed" if qed <= cfg.qed_min else "sa")
    if d.element_set & cfg.banned_elements:
        return Reject("structural", "banned_element")
    if d.charge_total != 0:
        return Reject("structural", "net_charge")
    if d.radical_flag:  # unreachable: the grammar cannot express radicals
        return Reject("structural", "radical")
    if d.bridgehead_count > cfg.bridgehead_max:
        return Reject("structural", "bridgeheads")
    if d.max_ring_size > cfg.max_ring:
        return Reject("structural", "ring_size")
    if d.rotatable_proxy > cfg.rot_max:
        return Reject("structural", "rotatable")
    if d.tpsa_proxy > cfg.tpsa_max:
        return Reject("structural", "tpsa")
    for pattern in cfg.banned_patterns:
        if pattern in mol.smiles:
            return Reject("structural", "banned_pattern")
    if not _phosphorus_ok(mol):
        return Reject("structural", "phosphorus")
    if d.logp_proxy > cfg.logp_max:
        return Reject("lipinski", "logp")
    if not cfg.mw_range[0] <= d.approx_mw <= cfg.mw_range[1]:
        return Reject("lipinski", "mw")
    if d.hbd_proxy > cfg.hbd_max:
        return Reject("lipinski", "hbd")
    if d.hba_proxy > cfg.hba_max:
        return Reject("lipinski", "hba")
    return None


def _phosphorus_ok(mol: ParsedMol) -> bool:
    """Every phosphorus must carry at least one double-bonded oxygen."""
    for i, atom in enumerate(mol.atoms):
        if atom.element != "P":
            continue
        if not any(b.order == 2.0 and mol.atoms[j].element == "O"
                   for j, b in mol.neighbors(i)):
            return False
    return True


@dataclass
class CurationReport:
    input_count: int = 0
    parse_failures: int = 0
    accepted_count: int = 0
    rejections: dict = field(default_factory=lambda: {s: 0 for s in STAGES})
    rule_counts: dict = field(default_factory=dict)
    bucket_sizes: dict = field(default_factory=dict)

    def reconciles(self) -> bool:
        return self.input_count == (self.accepted_count + self.parse_failures
                                    + sum(self.rejections.values()))

    def to_json(self) -> str:
        return json.dumps({
            "input": self.input_count,
            "parse_failures": self.parse_failures,
            "accepted": self.accepted_count,
            "rejections": self.rejections,
            "rules": self.rule_counts,
            "buckets": {str(k): v for k, v in sorted(self.bucket_sizes.items())},
        }, indent=2)


@dataclass(frozen=True)
class CuratedMol:
    smiles: str
    qed: float
    sa: float
    heavy_atoms: int


def curate_stream(lines, cfg: CurationConfig = CurationConfig()):
    """Curate an iterable of SMILES lines.

    Returns (accepted list, CurationReport).  Diversity admission buckets
    molecules by heavy-atom count; a candidate joins only when its maximum
    Tanimoto against everything already admitted to its bucket stays below
    the threshold.  Heavy-atom counts outside the bucket range are counted
    as diversity-stage rejections.
    """
    report = CurationReport()
    accepted: list[CuratedMol] = []
    buckets: dict[int, list[Fingerprint]] = {}

    def charge(stage: str, rule: str):
        report.rejections[stage] += 1
        key = f"{stage}.{rule}"
        report.rule_counts[key] = report.rule_counts.get(key, 0) + 1

    for raw in lines:
        smiles = raw.strip()
        if not smiles:
            continue
        report.input_count += 1
        mol, err = try_parse(smiles)
        if err is not None:
            report.parse_failures += 1
            continue
        d = descriptors(mol)
        qed, sa = surrogate_qed(d), surrogate_sa(d)
        verdict = classify(mol, d, qed, sa, cfg)
        if verdict is not None:
            charge(verdict.stage, verdict.rule)
            continue
        lo, hi = cfg.heavy_range
        if not lo <= d.heavy_atoms <= hi:
            charge("diversity", "size_bucket")
            continue
        fp = fingerprint(mol, cfg.fp_width)
        bucket = buckets.setdefault(d.heavy_atoms, [])
        if any(tanimoto(fp, other) >= cfg.tanimoto_max for other in bucket):
            charge("diversity", "similarity")
            continue
        bucket.append(fp)
        accepted.append(CuratedMol(smiles, qed, sa, d.heavy_atoms))
        report.accepted_count += 1

    report.bucket_sizes = {k: len(v) for k, v in buckets.items()}
    assert report.reconciles(), "curation ledger failed to reconcile"
    return accepted, report
