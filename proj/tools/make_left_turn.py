"""Regenerates fixtures/left_turn.json (unprotected left turn, 16 frames at 2 Hz)."""
import json
import math
import sys

DT = 0.5
FRAMES = 16
LANE = 1.75


def ego_state(t):
    # Straight north in the right lane, quarter-circle left turn, then straight west.
    speed, straight, radius = 6.0, 20.0, 8.75
    center = (LANE - radius, -5.0)
    arc = radius * math.pi / 2
    s = speed * t
    if s <= straight:
        return LANE, -25.0 + s, math.pi / 2, 0.0, speed
    if s <= straight + arc:
        a = (s - straight) / radius
        x, y = center[0] + radius * math.cos(a), center[1] + radius * math.sin(a)
        h = math.pi / 2 + a
        return x, y, h, speed * math.cos(h), speed * math.sin(h)
    d = s - straight - arc
    return center[0] - d, center[1] + radius, math.pi, -speed, 0.0


def straight_state(p0, v, t):
    return p0[0] + v[0] * t, p0[1] + v[1] * t, math.atan2(v[1], v[0]), v[0], v[1]


def states(fn):
    out = []
    for k in range(FRAMES):
        x, y, h, vx, vy = fn(k * DT)
        out.append({"x": round(x, 6), "y": round(y, 6), "heading": round(h, 6),
                    "vx": round(vx, 6), "vy": round(vy, 6)})
    return out


def camera(name, pos, yaw, fx=800.0, fy=800.0, w=1600, h=900):
    c, s = math.cos(yaw), math.sin(yaw)
    rot = [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]]
    ext = []
    for r in range(3):
        ext += [round(v, 12) for v in rot[r]]
        ext.append(round(-sum(rot[r][k] * pos[k] for k in range(3)), 12))
    ext += [0.0, 0.0, 0.0, 1.0]
    return {"name": name, "intrinsics": [fx, 0.0, w / 2, 0.0, fy, h / 2, 0.0, 0.0, 1.0],
            "extrinsics": ext, "width": w, "height": h}


def main():
    cam_pos = (LANE, -25.0, 1.5)
    doc = {
        "meta": {"id": "left_turn", "dt": DT, "num_frames": FRAMES},
        "ego": {"states": states(ego_state)},
        "agents": [
            {"id": "oncoming_car", "class": "car", "size": [4.6, 1.9, 1.5],
             "states": states(lambda t: straight_state((-LANE, 45.0), (0.0, -10.0), t))},
            {"id": "crossing_ped", "class": "pedestrian", "size": [0.6, 0.6, 1.7],
             "states": states(lambda t: straight_state((-10.0, -6.0), (0.0, 1.3), t))},
        ],
        "cameras": [
            camera("front_left", cam_pos, math.pi / 2 + 0.96),
            camera("front", cam_pos, math.pi / 2),
            camera("front_right", cam_pos, math.pi / 2 - 0.96),
        ],
    }
    out = sys.argv[1] if len(sys.argv) > 1 else "fixtures/left_turn.json"
    with open(out, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
