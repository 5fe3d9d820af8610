#!/usr/bin/env python3
"""Writes the bundled demo fixture: a 50-image manifest, knowledge base,
in-context examples, VQA records and a stub completion directory."""

import argparse
import json
import random
from pathlib import Path

MODALITIES = ["CT", "MRI", "Dermoscopy", "PET", "Endoscopy", "X-Ray",
              "Ultrasound", "Fundus"]

# Labels per modality, with a short knowledge paragraph each.
KNOWLEDGE = {
    "liver": ("umls", "The liver is the largest solid organ of the abdomen, in the right upper quadrant. It filters blood from the gut, stores glycogen and produces bile; cirrhosis and metastases are common findings on cross-sectional imaging."),
    "spleen": ("wikipedia", "The spleen lies in the left upper abdomen behind the stomach. It removes old red cells and supports immune responses; splenomegaly may follow portal hypertension or infection."),
    "left kidney": ("umls", "The left kidney sits retroperitoneally beside the spine, slightly higher than the right. It filters blood to form urine; cysts and stones are frequent incidental findings."),
    "right kidney": ("umls", "The right kidney lies below the liver in the retroperitoneum. It filters blood and regulates fluid balance; hydronephrosis indicates obstruction of urine flow."),
    "pancreas": ("wikipedia", "The pancreas lies across the posterior abdomen behind the stomach. It secretes digestive enzymes and insulin; pancreatic tumours often present late."),
    "brain tumor": ("manual", "A brain tumor is an abnormal mass of cells within the skull. Gliomas and meningiomas are common types; contrast-enhanced MRI shows their extent and surrounding oedema."),
    "edema": ("manual", "Peritumoral edema is fluid accumulation in the brain tissue around a lesion. It appears bright on T2-weighted MRI and contributes to raised intracranial pressure."),
    "melanoma": ("wikipedia", "Melanoma is a malignant tumour of melanocytes in the skin. Asymmetry, irregular borders and colour variation under dermoscopy suggest the diagnosis; early excision is curative."),
    "nevus": ("manual", "A melanocytic nevus is a benign mole made of clustered melanocytes. It is usually symmetric with a regular pigment network under dermoscopy."),
    "lymph node": ("umls", "Lymph nodes filter lymph and host immune cells. On PET, increased tracer uptake in an enlarged node may indicate metastatic spread or inflammation."),
    "lung lesion": ("manual", "A lung lesion is a focal abnormality in the lung parenchyma. Metabolically active lesions on PET raise concern for malignancy and guide biopsy."),
    "polyp": ("wikipedia", "A colorectal polyp is a growth projecting from the lining of the colon. Adenomatous polyps can progress to cancer, so they are removed during colonoscopy."),
    "instrument": ("manual", "Surgical instruments appear in endoscopic video as rigid metallic tools. Segmenting them supports tracking and skill assessment in minimally invasive surgery."),
    "left lung": ("umls", "The left lung has two lobes and shares the chest with the heart. On radiographs, loss of its normal lucency can reflect consolidation or effusion."),
    "right lung": ("umls", "The right lung has three lobes. Opacities on chest radiographs may indicate pneumonia, while a missing lung margin suggests pneumothorax."),
    "heart": ("wikipedia", "The heart pumps blood through the pulmonary and systemic circulations. On chest imaging an enlarged cardiac silhouette suggests cardiomegaly."),
    "breast lesion": ("manual", "A breast lesion on ultrasound is a focal mass in the breast tissue. Irregular margins and posterior shadowing favour malignancy over a simple cyst."),
    "thyroid nodule": ("manual", "A thyroid nodule is a lump within the thyroid gland. Ultrasound features such as microcalcifications and taller-than-wide shape guide fine-needle aspiration."),
    "optic disc": ("umls", "The optic disc is where the optic nerve leaves the eye. Its cup-to-disc ratio on fundus photographs is used to screen for glaucoma."),
    "optic cup": ("manual", "The optic cup is the central depression of the optic disc. Enlargement of the cup relative to the disc indicates loss of nerve fibres."),
    "adrenal medulla": ("wikipedia", "The adrenal medulla is the inner part of the adrenal gland. It releases adrenaline and noradrenaline; pheochromocytoma arises from its chromaffin cells."),
}

LABELS_BY_MODALITY = {
    "CT": ["liver", "spleen", "left kidney", "right kidney", "pancreas", "adrenal medulla"],
    "MRI": ["brain tumor", "edema"],
    "Dermoscopy": ["melanoma", "nevus"],
    "PET": ["lymph node", "lung lesion"],
    "Endoscopy": ["polyp", "instrument"],
    "X-Ray": ["left lung", "right lung", "heart"],
    "Ultrasound": ["breast lesion", "thyroid nodule"],
    "Fundus": ["optic disc", "optic cup"],
}

EXAMPLES = [
    "Question: Which structure in this image is responsible for filtering blood, and where is it?\n"
    "Answer: The liver occupies the right upper part of the image and filters blood arriving from the gut.",
    "Question: Is there anything in this scan that suggests an abnormal growth?\n"
    "Answer: Yes, the brain tumor appears as a bright mass, and the surrounding edema extends into nearby tissue.",
    "Question: What features of this skin lesion deserve attention?\n"
    "Answer: The melanoma shows irregular borders and uneven pigment, which warrant excision.",
]

SIZE = 32


def rle(bits):
    runs, current, count = [], 0, 0
    for b in bits:
        if b == current:
            count += 1
        else:
            runs.append(count)
            current, count = b, 1
    runs.append(count)
    return runs


def shape_mask(rng):
    bits = [0] * (SIZE * SIZE)
    cx, cy = rng.randint(6, SIZE - 7), rng.randint(6, SIZE - 7)
    rx, ry = rng.randint(2, 6), rng.randint(2, 6)
    ellipse = rng.random() < 0.5
    for y in range(SIZE):
        for x in range(SIZE):
            dx, dy = (x - cx) / rx, (y - cy) / ry
            inside = dx * dx + dy * dy <= 1.0 if ellipse else abs(dx) <= 1 and abs(dy) <= 1
            bits[y * SIZE + x] = 1 if inside else 0
    return bits


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", type=Path)
    parser.add_argument("--images", type=int, default=50)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    rng = random.Random(args.seed)
    out = args.out
    (out / "stub").mkdir(parents=True, exist_ok=True)

    with open(out / "manifest.jsonl", "w") as f:
        for i in range(args.images):
            modality = MODALITIES[i % len(MODALITIES)]
            pool = LABELS_BY_MODALITY[modality]
            count = rng.randint(1, min(3, len(pool)))
            masks = []
            for label in rng.sample(pool, count):
                bits = shape_mask(rng)
                masks.append({"label": label,
                              "mask": {"h": SIZE, "w": SIZE, "runs": rle(bits)}})
            record = {"id": f"img{i:03d}", "image": f"images/img{i:03d}.png",
                      "modality": modality, "masks": masks}
            f.write(json.dumps(record) + "\n")

    entries = [{"label": k, "text": v[1], "source": v[0]} for k, v in KNOWLEDGE.items()]
    (out / "knowledge.json").write_text(json.dumps(entries, indent=2) + "\n")
    (out / "examples.json").write_text(json.dumps(EXAMPLES, indent=2) + "\n")
    (out / "stub" / "default.txt").write_text(
        "Question: What can be observed in the highlighted part of this image?\n"
        "Answer: The image shows the {labels}, and their appearance is consistent "
        "with the expected anatomy.\n")
    with open(out / "vqa.jsonl", "w") as f:
        for i in range(20):
            f.write(json.dumps({"id": f"vqa{i:03d}", "question": "Is this a CT scan?",
                                "answer": "yes" if i % 2 else "no"}) + "\n")


if __name__ == "__main__":
    main()
