#!/usr/bin/env python3
"""Regenerates the checked-in test fixtures.

Everything here is computed with numpy and plain Python, independently of the
C++ engine: embeddings, brute-force retrieval orderings and the golden prompts
derived from them. Run from any directory; outputs land next to this script.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
GOLDEN = HERE / "golden"
DIM = 16
RNG_SEED = 20240611

LABELS = [
    "Atelectasis", "Consolidation", "Edema", "Enlarged Cardiomediastinum", "Lung Lesion",
    "Lung Opacity", "Pleural Effusion", "Pleural Other", "Pneumonia", "Pneumothorax",
]

TEMPLATES = [
    "Which signs show that the patient has {pathologies}?",
    "Explain why these {pathologies} are present in the image?",
    "What evidence in the image indicates {pathologies}?",
    "How can you tell that the patient has {pathologies} from the image?",
    "What features suggest the presence of {pathologies} in this image?",
]

# (subject, object); rows 5, 11 and 17 repeat rows 2, 7 and 14.
TRIPLETS = [
    ("opacity", "pneumonia"),
    ("consolidation", "pneumonia"),
    ("blunting of costophrenic angle", "pleural effusion"),
    ("increased interstitial markings", "edema"),
    ("enlarged cardiac silhouette", "cardiomegaly"),
    ("blunting of costophrenic angle", "pleural effusion"),
    ("linear opacity", "atelectasis"),
    ("volume loss", "atelectasis"),
    ("absent lung markings", "pneumothorax"),
    ("visceral pleural line", "pneumothorax"),
    ("hilar fullness", "lymphadenopathy"),
    ("volume loss", "atelectasis"),
    ("nodular density", "lung lesion"),
    ("air bronchograms", "consolidation"),
    ("kerley b lines", "interstitial edema"),
    ("meniscus sign", "pleural effusion"),
    ("widened mediastinum", "enlarged cardiomediastinum"),
    ("kerley b lines", "interstitial edema"),
    ("cephalization", "pulmonary vascular congestion"),
    ("patchy airspace disease", "infection"),
]
DUPLICATE_OF = {5: 2, 11: 7, 17: 14}


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def write_kgeb(path, ids, mat):
    mat = np.asarray(mat, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"KGEB")
        f.write(struct.pack("<HIQ", 1, mat.shape[1], len(ids)))
        for i, row in zip(ids, mat):
            f.write(struct.pack("<Q", i))
            f.write(row.tobytes())


def canonical(subject, obj, relation="suggestive_of"):
    return f"{subject} {relation} {obj}"


def cosine_rank(query, mat, ids):
    """Brute force in float64 over the raw float32 inputs; ties by ascending id."""
    q = query.astype(np.float64)
    m = mat.astype(np.float64)
    scores = (m @ q) / (np.linalg.norm(m, axis=1) * np.linalg.norm(q))
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [(ids[i], float(scores[i])) for i in order]


def certainty(score, neg=1 / 3, pos=2 / 3):
    if score < neg:
        return "negative"
    if score < pos:
        return "uncertain"
    return "positive"


def write_kgwt(path, layers):
    """layers: [(weights[out][in], bias[out], activation tag)]"""
    with open(path, "wb") as f:
        f.write(b"KGWT")
        f.write(struct.pack("<HI", 1, len(layers)))
        for w, b, act in layers:
            w = np.asarray(w, dtype="<f4")
            f.write(struct.pack("<IIB", w.shape[0], w.shape[1], act))
            f.write(w.tobytes())
            f.write(np.asarray(b, dtype="<f4").tobytes())


def head(rng):
    # 16 -> 8 (GELU) -> 10 (identity; the classifier applies the sigmoid).
    w1 = rng.standard_normal((8, DIM)) * 0.4
    b1 = rng.standard_normal(8) * 0.1
    w2 = rng.standard_normal((10, 8)) * 0.6
    b2 = rng.standard_normal(10) * 0.1
    write_kgwt(HERE / "head.kgwt", [(w1, b1, 2), (w2, b2, 0)])


def export_files():
    rows = [{"subject": s, "relation": "suggestive_of", "object": o, "source_id": f"study-{i:04d}"}
            for i, (s, o) in enumerate(TRIPLETS)]
    write_jsonl(HERE / "export20.jsonl", rows)

    # 20 mixed relations, 12 of them suggestive_of.
    mixed_plan = "SSLSMSSLSSMSLSSMSLLS"
    assert mixed_plan.count("S") == 12
    mixed = []
    for i, kind in enumerate(mixed_plan):
        s, o = TRIPLETS[i]
        rel = {"S": "suggestive_of", "L": "located_at", "M": "modify"}[kind]
        mixed.append({"subject": s, "relation": rel, "object": o, "source_id": f"mixed-{i:02d}"})
    write_jsonl(HERE / "export_mixed.jsonl", mixed)

    with open(HERE / "malformed.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for r in rows[:3]:
            f.write(json.dumps(r) + "\n")
        f.write('{"subject": "effusion", "relation": "suggestive_of", "source_id": "broken"}\n')


def embeddings(rng):
    mat = rng.standard_normal((20, DIM)).astype(np.float32)
    for dup, orig in DUPLICATE_OF.items():
        mat[dup] = mat[orig]
    write_kgeb(HERE / "triplets.kgeb", list(range(20)), mat)

    # A KGEB whose ids do not match the datastore (id 20 instead of 19).
    write_kgeb(HERE / "triplets_badids.kgeb", list(range(19)) + [20], mat)
    return mat


def queries(rng, tmat):
    # Each query leans towards two triplets, so rankings are well separated.
    qs = []
    for i in range(20):
        a, b = i % 20, (i * 7 + 3) % 20
        q = 0.8 * tmat[a] + 0.45 * tmat[b] + 0.35 * rng.standard_normal(DIM)
        qs.append(q.astype(np.float32))
    qmat = np.stack(qs)
    ids = [100 + i for i in range(20)]
    write_kgeb(HERE / "queries.kgeb", ids, qmat)
    return ids, qmat


def images(rng, qmat):
    # Ten stored studies. Their embeddings live near a subset of queries and
    # each links to four datastore triplets.
    imat = np.stack([qmat[2 * i] + 0.5 * rng.standard_normal(DIM) for i in range(10)]).astype(np.float32)
    ids = [1000 + i for i in range(10)]
    write_kgeb(HERE / "images.kgeb", ids, imat)
    links = []
    for i, image_id in enumerate(ids):
        triplets = sorted({(3 * i) % 20, (3 * i + 1) % 20, (5 * i + 4) % 20, (7 * i + 9) % 20})
        while len(triplets) < 4:
            triplets.append((triplets[-1] + 1) % 20)
        links.append({"image_id": image_id, "triplet_ids": triplets})
    write_jsonl(HERE / "image_triplets.jsonl", links)
    return ids, imat, links


CASE_TEXTS = [
    ("Patchy opacity at the right base, likely pneumonia.", ["Right basilar opacity concerning for pneumonia."]),
    ("Blunting of the left costophrenic angle suggests a small effusion.",
     ["Small left pleural effusion with blunting of the costophrenic angle.", "Left effusion is small."]),
    ("Linear opacity in the left lower lobe consistent with atelectasis.",
     ["Left lower lobe linear atelectasis."]),
    ("Kerley B lines and cephalization indicate interstitial edema.",
     ["Interstitial edema with Kerley B lines.", "Findings of mild pulmonary edema."]),
    ("The cardiac silhouette is enlarged.", ["Enlarged cardiac silhouette without edema."]),
    ("A visceral pleural line at the apex indicates pneumothorax.",
     ["Right apical pneumothorax with visible pleural line."]),
    ("Opacities at both lung bases, probably atelectasis.", ["Basal atelectasis.", "Opacities at both bases, atelectasis."]),
    ("Air bronchograms within the consolidation suggest pneumonia.",
     ["Consolidation with air bronchograms, consistent with pneumonia."]),
    ("A nodular density in the right upper lobe may be a lung lesion.",
     ["Right upper lobe nodule, possible lung lesion."]),
    ("Meniscus sign at the right base from a pleural effusion.",
     ["Right pleural effusion with meniscus sign."]),
    ("Widened mediastinum raises concern for an enlarged cardiomediastinum.",
     ["The cardiomediastinal silhouette is enlarged."]),
    ("Volume loss in the left lower lobe from atelectasis.", ["Left lower lobe volume loss and atelectasis."]),
    ("Diffuse interstitial markings are increased, suggesting edema.",
     ["Increased interstitial markings from edema.", "Mild interstitial edema."]),
    ("Hilar fullness without focal consolidation.", ["Hilar fullness, no consolidation."]),
    ("Absent lung markings at the apex, small pneumothorax.",
     ["Small apical pneumothorax.", "Apical pneumothorax with absent markings."]),
    ("Patchy airspace disease in the lingula, possible pneumonia.",
     ["Lingular airspace disease, pneumonia is possible."]),
    ("Left lower lobe opacity with effusion.", ["Left basilar opacity and small effusion."]),
    ("Right lower lobe consolidation and atelectasis.", ["Consolidation and atelectasis at the right base."]),
    ("Lung opacity in the right mid zone.", ["Right mid lung opacity."]),
    ("Pleural thickening along the left lateral chest wall.", ["Left lateral pleural thickening."]),
]

# Per case: (predicted [(label, score)], gold [(label, certainty)]).
CASE_LABELS = [
    ([("Pneumonia", 0.91), ("Lung Opacity", 0.74)], [("Pneumonia", "positive"), ("Lung Opacity", "positive")]),
    ([("Pleural Effusion", 0.82), ("Atelectasis", 0.12)], [("Pleural Effusion", "positive")]),
    ([("Atelectasis", 0.88)], [("Atelectasis", "positive")]),
    ([("Edema", 0.79), ("Pleural Effusion", 0.60)], [("Edema", "positive"), ("Pleural Effusion", "uncertain")]),
    ([("Enlarged Cardiomediastinum", 0.55), ("Edema", 0.22)], [("Enlarged Cardiomediastinum", "positive")]),
    ([("Pneumothorax", 0.95)], [("Pneumothorax", "positive")]),
    ([("Atelectasis", 0.71), ("Lung Opacity", 0.58)], [("Atelectasis", "positive"), ("Lung Opacity", "uncertain")]),
    ([("Consolidation", 0.84), ("Pneumonia", 0.77)], [("Consolidation", "positive"), ("Pneumonia", "positive")]),
    ([("Lung Lesion", 0.47)], [("Lung Lesion", "uncertain")]),
    ([("Pleural Effusion", 0.69), ("Pneumothorax", 0.05)], [("Pleural Effusion", "positive")]),
    ([("Enlarged Cardiomediastinum", 0.81)], [("Enlarged Cardiomediastinum", "positive")]),
    ([("Atelectasis", 0.45), ("Consolidation", 0.18)], [("Atelectasis", "positive")]),
    ([("Edema", 0.73)], [("Edema", "positive")]),
    ([("Consolidation", 0.39), ("Lung Opacity", 0.74)], [("Consolidation", "negative")]),
    ([("Pneumothorax", 0.62)], [("Pneumothorax", "positive")]),
    ([("Pneumonia", 0.52), ("Lung Opacity", 0.68)], [("Pneumonia", "uncertain"), ("Lung Opacity", "positive")]),
    ([("Lung Opacity", 0.76), ("Pleural Effusion", 0.57)], [("Lung Opacity", "positive"), ("Pleural Effusion", "positive")]),
    ([("Consolidation", 0.80), ("Atelectasis", 0.67)], [("Consolidation", "positive"), ("Atelectasis", "positive")]),
    ([("Lung Opacity", 0.90)], [("Lung Opacity", "positive")]),
    ([("Pleural Other", 0.36), ("Pleural Effusion", 0.15)], [("Pleural Other", "positive")]),
]


def case_rows(query_ids):
    rows = []
    for i, ((gen, refs), (pred, gold)) in enumerate(zip(CASE_TEXTS, CASE_LABELS)):
        rows.append({
            "case_id": f"c{i + 1:02d}",
            "query_id": query_ids[i],
            "predicted": [{"label": l, "score": s} for l, s in pred],
            "gold": [{"label": l, "certainty": c} for l, c in gold],
            "generated_nle": gen,
            "reference_nles": refs,
        })
    return rows


def cases12():
    # Cases 1-7 match on every gold label; 8 and 9 match one of two; 10 matches
    # nothing; 11's gold label was never predicted; 12 has no gold labels.
    spec = [
        ([("Pneumonia", 0.9)], [("Pneumonia", "positive")]),
        ([("Edema", 0.5)], [("Edema", "uncertain")]),
        ([("Atelectasis", 0.1)], [("Atelectasis", "negative")]),
        ([("Pneumothorax", 0.8), ("Lung Lesion", 0.2)], [("Pneumothorax", "positive"), ("Lung Lesion", "negative")]),
        ([("Consolidation", 0.7), ("Pneumonia", 0.4)], [("Consolidation", "positive"), ("Pneumonia", "uncertain")]),
        ([("Pleural Effusion", 0.95)], [("Pleural Effusion", "positive")]),
        ([("Lung Opacity", 0.6), ("Edema", 0.9), ("Pleural Other", 0.05)],
         [("Lung Opacity", "uncertain"), ("Edema", "positive")]),
        ([("Pneumonia", 0.9), ("Edema", 0.9)], [("Pneumonia", "positive"), ("Edema", "negative")]),
        ([("Atelectasis", 0.5), ("Lung Opacity", 0.8)], [("Atelectasis", "positive"), ("Lung Opacity", "positive")]),
        ([("Pneumothorax", 0.2)], [("Pneumothorax", "positive")]),
        ([("Pneumonia", 0.9)], [("Edema", "positive")]),
        ([("Pneumonia", 0.9)], []),
    ]
    rows = []
    for i, (pred, gold) in enumerate(spec):
        rows.append({
            "case_id": f"s{i + 1:02d}",
            "predicted": [{"label": l, "score": s} for l, s in pred],
            "gold": [{"label": l, "certainty": c} for l, c in gold],
            "generated_nle": "placeholder explanation text",
            "reference_nles": ["placeholder reference text"],
        })
    write_jsonl(HERE / "cases12.jsonl", rows)


def corpus10():
    pairs = [
        ("the heart size is normal", ["the heart size is normal"]),
        ("small left pleural effusion is present", ["there is a small left pleural effusion", "left effusion, small"]),
        ("opacity at the right base suggests pneumonia", ["right basilar opacity concerning for pneumonia"]),
        ("no pneumothorax is seen on this image", ["no evidence of pneumothorax"]),
        ("mild pulmonary edema with kerley lines", ["mild interstitial pulmonary edema", "kerley b lines from edema"]),
        ("basal opacities most likely atelectasis", ["basal opacities, most likely atelectasis."]),
        ("lines and tubes are unchanged today", ["support devices are in stable position"]),
        ("cardiac silhouette enlarged with edema", ["enlarged cardiac silhouette and edema"]),
        ("effusion pleural small left", ["small left pleural effusion"]),
        ("the lungs are clear without focal consolidation", ["lungs are clear", "no focal consolidation is seen"]),
    ]
    write_jsonl(HERE / "corpus10.jsonl", [
        {"case_id": f"p{i + 1:02d}", "candidate": c, "references": r} for i, (c, r) in enumerate(pairs)])


def golden_prompts(tmat, qids, qmat, rows):
    ds_texts = [canonical(s, o) for s, o in TRIPLETS]
    ids = list(range(20))
    min_gap = 1.0
    for i, row in enumerate(rows):
        ranked = cosine_rank(qmat[i], tmat, ids)
        # Adjacent scores within the top 8 are either exact duplicates or well separated.
        for (ia, sa), (ib, sb) in zip(ranked[:8], ranked[1:9]):
            same_vec = np.array_equal(tmat[ia], tmat[ib])
            assert same_vec or sa - sb > 1e-6, (row["case_id"], ia, ib, sa - sb)
            if not same_vec:
                min_gap = min(min_gap, sa - sb)
        top = [t for t, _ in ranked[:7]]
        items = [f"{certainty(p['score'])} {p['label']}" for p in row["predicted"]
                 if certainty(p["score"]) in ("positive", "uncertain")]
        assert items, row["case_id"]
        question = TEMPLATES[i % 5].replace("{pathologies}", ", ".join(items))
        prompt = "Context: " + "; ".join(ds_texts[t] for t in top) + "\nQuestion: " + question
        (GOLDEN / f"prompt_{row['case_id']}.txt").write_bytes(prompt.encode("utf-8"))
        row["_top7"] = top
    return min_gap


def main():
    GOLDEN.mkdir(exist_ok=True)
    rng = np.random.default_rng(RNG_SEED)
    export_files()
    tmat = embeddings(rng)
    qids, qmat = queries(rng, tmat)
    images(rng, qmat)
    head(rng)
    rows = case_rows(qids)
    min_gap = golden_prompts(tmat, qids, qmat, rows)
    write_jsonl(HERE / "cases20.jsonl", [{k: v for k, v in r.items() if not k.startswith("_")} for r in rows])
    cases12()
    corpus10()

    # Retrieval oracle values frozen into the C++ tests.
    print("min top-8 score gap:", min_gap)
    print("query 100 top-7:", cosine_rank(qmat[0], tmat, list(range(20)))[:7])
    for name in sorted(p.name for p in HERE.iterdir() if p.is_file() and p.suffix in (".kgeb", ".jsonl")):
        print(name, hashlib.sha256((HERE / name).read_bytes()).hexdigest()[:16])


if __name__ == "__main__":
    main()
