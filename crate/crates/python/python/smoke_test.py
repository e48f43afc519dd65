"""Smoke test for the labelqa extension module.

Build and run:
    maturin develop --release        # or: pip install --no-build-isolation .
    python3 python/smoke_test.py
"""

import json
import os
import tempfile

import labelqa


def main():
    records = labelqa.synthetic_stack(num_images=8, image_size=120, seed=3, g2_dilate_px=2)
    assert len(records) == 8
    rec = records[0]
    assert rec.image.width == 120 and rec.g1.height == 120
    assert rec.g2.count() >= rec.g1.count()

    planes = [labelqa.preprocess(r.image, size=120, s_d=8) for r in records]
    assert planes[0].roi.count() > 0

    baseline = labelqa.fit_baseline_model([(planes[0], records[0].ground_truth)])
    print(f"baseline s_d={baseline.s_d} theta={baseline.theta:.2f} auc={baseline.auc:.4f}")

    train = [(p, r.ground_truth) for p, r in zip(planes[:3], records[:3])]
    model = labelqa.fit_paresn_model(train, m=30, w_m=40, seed=1)
    rps = model.predict(planes[5])
    p1, _, _ = rps.masks()
    scores = labelqa.segmentation_scores(p1, records[5].ground_truth, planes[5].roi)
    print(f"paresn dc on held-out image: {scores['dc']:.3f}")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.paresn")
        model.save(path)
        again = labelqa.ParEsnModel.load(path).predict(planes[5])
        assert again.masks()[0] == p1

    noisy = labelqa.rcap(records[5].g1, w=30, kappa=2, seed=9)
    assert labelqa.iou(noisy, records[5].g1) < 1.0 or records[5].g1.count() == 0

    decision = labelqa.tlsa(rps, records[5].g1, noisy, planes[5].base)
    print(f"tlsa: tau={decision.tau} branch={decision.branch_taken}")
    assert decision.tau in ("Manual", "G1", "G2")
    json.loads(decision.to_json())
    print("smoke test passed")


if __name__ == "__main__":
    main()
