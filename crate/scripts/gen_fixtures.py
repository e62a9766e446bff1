#!/usr/bin/env python3
"""Regenerates the synthetic source manifests used by the test suites.

The films are hand-authored: scene structure, descriptions and dialogue are
fixed below; embeddings are drawn from a seeded RNG so the output is stable.

    python3 scripts/gen_fixtures.py crates/core/tests/fixtures
"""
import json
import math
import random
import sys
from pathlib import Path

DIM = 8


def unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [round(x / n, 9) for x in v]


def basis(i, dim=DIM):
    v = [0.0] * dim
    v[i] = 1.0
    return v


def jitter(rng, v, scale):
    return unit([x + rng.gauss(0.0, scale) for x in v])


def mix(a, b, wa, wb):
    return unit([wa * x + wb * y for x, y in zip(a, b)])


def build(spec, seed):
    rng = random.Random(seed)
    chars = spec["characters"]
    anchors = {}
    for c in chars:
        anchors[c["id"]] = {
            "face": unit(c["face"]),
            "body": unit(c["body"]),
            "voice": unit(c["voice"]),
        }
    shots = []
    lines = []
    t = 0.0
    det_counter = 0
    line_counter = 0
    for sid, shot in enumerate(spec["shots"]):
        start, end = t, t + shot["duration"]
        t = end
        scene = spec["scenes"][shot["scene"]]
        keyframe = jitter(rng, scene, 0.08)
        detections = []
        dialogue = shot.get("dialogue", [])
        # Lines split the shot evenly; each line's span holds only its own speaker's lip movement.
        step = shot["duration"] / max(len(dialogue), 1)
        spans = [(round(start + i * step + 0.05, 3), round(start + (i + 1) * step - 0.05, 3))
                 for i in range(len(dialogue))]
        speaking = [(spans[i], l[0]) for i, l in enumerate(dialogue) if not l[2]]
        for k, cid in enumerate(shot["present"]):
            # Two detections per on-screen character, spread across the shot.
            for j in range(2):
                ts = round(start + (k * 2 + j + 1) * shot["duration"] / (2 * len(shot["present"]) + 1), 3)
                body_only = shot.get("body_only") == cid
                det = {
                    "detection_id": f"d{det_counter}",
                    "shot_id": sid,
                    "timestamp": ts,
                    "face_embedding": None if body_only else jitter(rng, anchors[cid]["face"], 0.05),
                    "body_embedding": jitter(rng, anchors[cid]["body"], 0.05),
                    "lip_activity": 0.9 if any(a <= ts <= b and who == cid for (a, b), who in speaking) else 0.1,
                }
                det_counter += 1
                detections.append(det)
        refs = []
        for (speaker, text, offscreen), (line_start, line_end) in zip(dialogue, spans):
            lid = f"l{line_counter}"
            line_counter += 1
            refs.append(lid)
            lines.append({
                "line_id": lid,
                "shot_id": sid,
                "text": text,
                "start": line_start,
                "end": line_end,
                "audio_embedding": jitter(rng, anchors[speaker]["voice"], 0.02),
                "ocr_confidence": 0.95,
                "speaker_id": None,
            })
        shots.append({
            "shot_id": sid,
            "start": round(start, 3),
            "end": round(end, 3),
            "description": shot["description"],
            "keyframe_embedding": keyframe,
            "detections": detections,
            "dialogue_refs": refs,
        })
    characters = []
    for c in chars:
        characters.append({
            "character_id": c["id"],
            "name": c["name"],
            "face_anchor_embeddings": [anchors[c["id"]]["face"]],
            "body_anchor_embeddings": [anchors[c["id"]]["body"]],
            "bio": c.get("bio"),
        })
    return {
        "schema_version": "1",
        "source_id": spec["source_id"],
        "title": spec["title"],
        "frame_rate": {"num": 24, "den": 1},
        "embedding_dim": DIM,
        "shots": shots,
        "characters": characters,
        "dialogue_track": lines,
    }


SHAWFIX = {
    "source_id": "shawfix",
    "title": "Shawfix",
    "scenes": [basis(0), basis(3), basis(6)],
    "characters": [
        {"id": "andy", "name": "Andy Dufresne", "bio": "A banker sentenced to life in prison.",
         "face": [0.1, 0.9, 0.2, 0, 0, 0.1, 0, 0], "body": [0, 0.1, 0, 0.9, 0.3, 0, 0, 0.1],
         "voice": [0.9, 0, 0.1, 0, 0, 0.2, 0, 0]},
        {"id": "norton", "name": "Warden Norton", "bio": "The prison warden.",
         "face": [0, 0.1, 0.1, 0, 0.2, 0.9, 0, 0], "body": [0.2, 0, 0, 0, 0, 0.1, 0.9, 0.2],
         "voice": [0, 0, 0, 0.9, 0.1, 0, 0.2, 0.1]},
        {"id": "red", "name": "Red", "bio": "A long-serving inmate who can get things.",
         "face": [0.9, 0.1, 0, 0.2, 0, 0, 0.1, 0], "body": [0, 0, 0.9, 0.1, 0, 0, 0.1, 0.3],
         "voice": [0, 0.2, 0, 0, 0.9, 0, 0, 0.3]},
    ],
    "shots": [
        {"scene": 0, "duration": 6.0, "present": ["andy"],
         "description": "Andy arrives at Shawshank prison on a bus.",
         "dialogue": []},
        {"scene": 0, "duration": 5.0, "present": ["red"],
         "description": "Red watches the new inmates from the yard.",
         "dialogue": [("red", "I bet on the tall one.", False)]},
        {"scene": 0, "duration": 7.0, "present": ["norton", "andy"],
         "description": "Warden Norton addresses the new prisoners.",
         "dialogue": [("norton", "Put your trust in the Lord.", False)]},
        {"scene": 0, "duration": 8.0, "present": ["andy", "red"],
         "description": "Andy meets Red in the yard and asks for a rock hammer.",
         "dialogue": [("andy", "I need a rock hammer.", False), ("red", "What for?", False)]},
        {"scene": 1, "duration": 6.0, "present": ["andy", "red"], "body_only": "red",
         "description": "Inmates tar the prison roof in the sun.",
         "dialogue": []},
        {"scene": 1, "duration": 9.0, "present": ["andy"],
         "description": "Andy offers tax advice to the guards on the roof.",
         "dialogue": [("andy", "Do you trust your wife?", False)]},
        {"scene": 1, "duration": 5.0, "present": ["norton", "andy"],
         "description": "Norton inspects the cells and takes Andy's bible.",
         "dialogue": [("norton", "Salvation lies within.", False)]},
        {"scene": 1, "duration": 4.0, "present": ["andy", "red"],
         "description": "The inmates share a birthday cake in the mess hall.",
         "dialogue": [("norton", "Enjoy it while it lasts.", True)]},
        {"scene": 2, "duration": 10.0, "present": ["andy"],
         "description": "Andy crawls through the tunnel during the storm and begins his escape.",
         "dialogue": []},
        {"scene": 2, "duration": 6.0, "present": ["norton"],
         "description": "Norton discovers the poster hiding the escape tunnel.",
         "dialogue": [("norton", "Lord, it's a miracle.", False)]},
        {"scene": 2, "duration": 7.0, "present": ["andy"],
         "description": "Andy emerges in the river, free after the escape.",
         "dialogue": []},
        {"scene": 2, "duration": 8.0, "present": ["red", "andy"],
         "description": "Red walks along the beach to find Andy.",
         "dialogue": [("red", "I hope the Pacific is as blue as it has been in my dreams.", False)]},
    ],
}

GREENFIX = {
    "source_id": "greenfix",
    "title": "Greenfix",
    "scenes": [basis(1), basis(5)],
    "characters": [
        {"id": "don", "name": "Don Shirley", "bio": "A classical pianist on a concert tour.",
         "face": [0, 0, 0.9, 0.1, 0, 0, 0.3, 0], "body": [0.1, 0, 0, 0, 0.9, 0, 0, 0.3],
         "voice": [0, 0.9, 0, 0.1, 0, 0, 0.2, 0]},
        {"id": "tony", "name": "Tony Lip", "bio": "A bouncer hired as a driver.",
         "face": [0.2, 0, 0, 0.1, 0, 0, 0, 0.9], "body": [0.9, 0.1, 0, 0, 0, 0.2, 0, 0],
         "voice": [0, 0, 0.2, 0, 0, 0.9, 0, 0.1]},
    ],
    "shots": [
        {"scene": 0, "duration": 5.0, "present": ["tony"],
         "description": "Tony works the door of a nightclub.",
         "dialogue": []},
        {"scene": 0, "duration": 6.0, "present": ["don", "tony"],
         "description": "Don interviews Tony for the driver job.",
         "dialogue": [("don", "Have you had any trouble with the law?", False)]},
        {"scene": 0, "duration": 4.0, "present": ["tony"],
         "description": "Tony packs the car for the tour.",
         "dialogue": []},
        {"scene": 1, "duration": 7.0, "present": ["don", "tony"],
         "description": "Don plays the piano at a concert while Tony waits outside.",
         "dialogue": [("tony", "He is a genius.", False)]},
        {"scene": 1, "duration": 5.0, "present": ["tony"],
         "description": "Tony writes a letter home from the motel.",
         "dialogue": [("don", "Let me help you with that letter.", True)]},
        {"scene": 1, "duration": 6.0, "present": ["don", "tony"],
         "description": "Don and Tony drive home through the snow.",
         "dialogue": []},
    ],
}


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures")
    out.mkdir(parents=True, exist_ok=True)
    for spec, seed in ((SHAWFIX, 7), (GREENFIX, 11)):
        doc = build(spec, seed)
        (out / f"{spec['source_id']}.json").write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
