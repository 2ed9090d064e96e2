"""Patient-disjoint train/validation splitting."""
import numpy as np

from ..consensus import balance_items
from ..errors import TooFewPatients

MAX_ATTEMPTS = 100


def _has_both(items):
    labels = {it.label for it in items}
    return labels == {0, 1}


def split_by_patient(items, train_fraction=0.8, balance=True, seed=0):
    """Partition cohort items so that no patient lands on both sides.

    Patients are shuffled with ``seed`` and cut where the cumulative item
    count is closest to ``train_fraction`` of the total. Shuffles are redrawn
    (up to ``MAX_ATTEMPTS``) until both sides hold both classes. With
    ``balance`` each side is then undersampled to equal class counts.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    items = list(items)
    patients = sorted({it.patient_id for it in items})
    if len(patients) < 2:
        raise TooFewPatients(f"need at least 2 patients, got {len(patients)}")
    counts = {p: 0 for p in patients}
    for it in items:
        counts[it.patient_id] += 1
    target = train_fraction * len(items)
    rng = np.random.default_rng(seed)

    for _ in range(MAX_ATTEMPTS):
        order = [patients[i] for i in rng.permutation(len(patients))]
        cum = np.cumsum([counts[p] for p in order])[:-1]
        cut = int(np.argmin(np.abs(cum - target))) + 1
        train_pids = set(order[:cut])
        train = [it for it in items if it.patient_id in train_pids]
        val = [it for it in items if it.patient_id not in train_pids]
        if _has_both(train) and _has_both(val):
            break
    if balance:
        if _has_both(train):
            train = balance_items(train, rng)
        if _has_both(val):
            val = balance_items(val, rng)
    return train, val
