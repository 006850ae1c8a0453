import json
from pathlib import Path

import pytest

from causalcap.data import CtnCaption, DatasetManifest, VideoRecord
from causalcap.training import TrainingSet, build_training_set
from causalcap.video import SyntheticDecoder

# toy dims compatible with stage1.EncoderConfig; image_size matches the
# synthetic decoder output so no resize information is lost
TOY_ENCODER_SIZES = dict(
    embed_dim=16,
    image_size=32,
    patch_size=16,
    vision_width=32,
    vision_layers=2,
    vision_heads=4,
    text_width=32,
    text_layers=2,
    text_heads=4,
    context_length=32,
)
TOY_STAGE2_SIZES = dict(d_model=32, n_heads=4, max_len=24)

CAPTION_BANK = [
    ("a dog chases a ball", "the dog catches the ball"),
    ("a man kicks the door", "the door swings open"),
    ("rain falls on the street", "the street gets wet"),
    ("a cat sees a bird", "the cat jumps at the bird"),
    ("a car hits a bump", "the car flips over"),
    ("a chef drops a plate", "the plate breaks on the floor"),
    ("a kid throws a stone", "the window cracks loudly"),
    ("wind blows the leaves", "the leaves swirl in the air"),
]


def make_manifest(n: int = 4, split: str = "train", tag: str = "custom") -> DatasetManifest:
    records = [
        VideoRecord(f"v{i:02d}", f"media/v{i:02d}.avi", 3.0 + (i % 3), tag, split)
        for i in range(n)
    ]
    ctn = {
        r.video_id: CtnCaption(r.video_id, *CAPTION_BANK[i % len(CAPTION_BANK)])
        for i, r in enumerate(records)
    }
    return DatasetManifest(records, {}, ctn)


def make_training_set(n: int = 4, split: str = "train") -> TrainingSet:
    return build_training_set(make_manifest(n, split), SyntheticDecoder(), split=split, resize_to=32)


def write_manifest_files(tmp_path: Path, n: int = 3) -> dict[str, Path]:
    """Raw manifest + caption sidecars on disk for CLI-level tests."""
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text(
        "".join(
            json.dumps(
                {
                    "video_id": f"v{i:02d}",
                    "media_path": f"media/v{i:02d}.avi",
                    "duration_s": 3.0 + i,
                    "dataset_tag": "custom",
                    "split": "train",
                }
            )
            + "\n"
            for i in range(n)
        ),
        encoding="utf-8",
    )
    captions = tmp_path / "captions.json"
    captions.write_text(
        json.dumps(
            {
                f"v{i:02d}": [CAPTION_BANK[i % len(CAPTION_BANK)][0], "a second view of the scene"]
                for i in range(n)
            }
        ),
        encoding="utf-8",
    )
    ctn = tmp_path / "ctn.json"
    ctn.write_text(
        json.dumps(
            {
                f"v{i:02d}": {
                    "Cause": CAPTION_BANK[i % len(CAPTION_BANK)][0],
                    "Effect": CAPTION_BANK[i % len(CAPTION_BANK)][1],
                }
                for i in range(n)
            }
        ),
        encoding="utf-8",
    )
    return {"manifest": manifest, "captions": captions, "ctn": ctn}


@pytest.fixture
def toy_set() -> TrainingSet:
    return make_training_set(4)


GOLDEN_DIR = Path(__file__).parent / "golden"
