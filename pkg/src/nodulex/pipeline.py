"""Study-directory processing shared by the experiment runners and the CLI.

A study directory holds ``<patient>.rawct`` / ``<patient>.xml`` pairs. One
pass per patient builds the consensus nodules, the non-nodule loci, their QIF
vectors and the requested patch shapes, so volumes never need to be held in
memory all at once.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .consensus import build_cohort, build_consensus, non_nodule_loci
from .ingest import parse_annotations, parse_volume
from .patchset import PatchSet, extract_patch, normalize_patch
from .qif import auto_segment, compute_features

log = logging.getLogger(__name__)


def study_files(study_dir):
    """Sorted ``(patient_stem, rawct_path, xml_path)`` triples."""
    study_dir = Path(study_dir)
    out = []
    for vpath in sorted(study_dir.glob("*.rawct")):
        xpath = vpath.with_suffix(".xml")
        if not xpath.exists():
            raise FileNotFoundError(f"{vpath.name} has no matching annotation file {xpath.name}")
        out.append((vpath.stem, vpath, xpath))
    if not out:
        raise FileNotFoundError(f"no .rawct volumes found in {study_dir}")
    return out


@dataclass
class StudyData:
    nodules: list = field(default_factory=list)
    non_nodules: list = field(default_factory=list)
    qif: dict = field(default_factory=dict)  # item_id -> (50,) array
    patches: dict = field(default_factory=dict)  # (W, H, D) -> {item_id: Patch}
    normalization: str = "hu_window"

    def cohort(self, design, balance=False, seed=0):
        return build_cohort(self.nodules, self.non_nodules, design, balance, seed)

    def patchset(self, items, shape, design=""):
        by_id = self.patches[tuple(shape)]
        patches = [replace(by_id[it.item_id], label=int(it.label)) for it in items]
        return PatchSet(patches, design, self.normalization, tuple(shape))

    def features(self, items):
        return np.array([self.qif[it.item_id] for it in items]).reshape(len(items), -1)


def process_patient(volume, aset, shapes=(), normalization="hu_window", with_qif=True):
    pid = volume.patient_id or aset.patient_id
    nodules = build_consensus(aset, volume.dims, pid)
    loci = non_nodule_loci(aset, pid)
    qif, patches = {}, {tuple(s): {} for s in shapes}
    smin, smax = float(volume.voxels.min()), float(volume.voxels.max())
    entries = [(n.nodule_uid, n.centroid, n.consensus_mask) for n in nodules]
    entries += [(nn.locus_id, nn.position, None) for nn in loci]
    for item_id, center, mask in entries:
        if with_qif:
            mask = mask if mask is not None else auto_segment(volume, center)
            qif[item_id] = compute_features(volume, mask).values
        for shape in patches:
            raw = extract_patch(volume, center, shape)
            patches[shape][item_id] = normalize_patch(raw, normalization, smin, smax, item_id, 0)
    return nodules, loci, qif, patches


def process_study(study_dir, shapes=(), normalization="hu_window", with_qif=True):
    data = StudyData(normalization=normalization, patches={tuple(s): {} for s in shapes})
    for stem, vpath, xpath in study_files(study_dir):
        volume = parse_volume(vpath)
        aset = parse_annotations(xpath.read_bytes(), dims=volume.dims)
        nodules, loci, qif, patches = process_patient(volume, aset, shapes, normalization, with_qif)
        data.nodules.extend(nodules)
        data.non_nodules.extend(loci)
        data.qif.update(qif)
        for shape, by_id in patches.items():
            data.patches[shape].update(by_id)
        log.debug("processed %s: %d nodules, %d non-nodules", stem, len(nodules), len(loci))
    return data

