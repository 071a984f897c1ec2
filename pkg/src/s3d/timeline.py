"""SVG timeline rendering: per video, ground-truth bars (black) above
predicted bars (green) with score labels."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

MARGIN_LEFT = 110
MARGIN_TOP = 24
TRACK_HEIGHT = 46
BAR_HEIGHT = 9
PLOT_WIDTH = 760

GT_COLOR = "#000000"
DET_COLOR = "#2ca02c"


def _bar(parent, x, y, width, color, title=None):
    rect = ET.SubElement(
        parent,
        "rect",
        x=f"{x:.2f}",
        y=f"{y:.2f}",
        width=f"{max(width, 0.5):.2f}",
        height=str(BAR_HEIGHT),
        fill=color,
    )
    if title:
        ET.SubElement(rect, "title").text = title
    return rect


def render_timeline_svg(
    detection_records: list[dict],
    annotation_records: list[dict],
    out_path: str | Path,
    min_score: float = 0.0,
) -> None:
    """Draw one horizontal track per video. ``detection_records`` and
    ``annotation_records`` are the parsed JSON structures of the detection
    and annotation files."""
    dets_by_video = {rec["video_id"]: rec.get("detections", []) for rec in detection_records}
    anns_by_video = {rec["video_id"]: rec.get("annotations", []) for rec in annotation_records}
    video_ids = sorted(set(dets_by_video) | set(anns_by_video))

    max_t = 1.0
    for rec in annotation_records:
        for a in rec.get("annotations", []):
            max_t = max(max_t, a["end_sec"])
    for rec in detection_records:
        for d in rec.get("detections", []):
            max_t = max(max_t, d["end_sec"])

    height = MARGIN_TOP + TRACK_HEIGHT * max(len(video_ids), 1) + 10
    width = MARGIN_LEFT + PLOT_WIDTH + 20
    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(width),
        height=str(height),
        viewBox=f"0 0 {width} {height}",
    )

    def sx(t: float) -> float:
        return MARGIN_LEFT + PLOT_WIDTH * t / max_t

    for row, vid in enumerate(video_ids):
        y0 = MARGIN_TOP + row * TRACK_HEIGHT
        label = ET.SubElement(svg, "text", x="8", y=f"{y0 + 14}")
        label.set("font-size", "11")
        label.set("font-family", "sans-serif")
        label.text = vid
        ET.SubElement(
            svg,
            "line",
            x1=str(MARGIN_LEFT),
            x2=str(MARGIN_LEFT + PLOT_WIDTH),
            y1=f"{y0 + TRACK_HEIGHT - 8}",
            y2=f"{y0 + TRACK_HEIGHT - 8}",
            stroke="#cccccc",
        )
        for a in anns_by_video.get(vid, []):
            _bar(
                svg,
                sx(a["start_sec"]),
                y0 + 4,
                sx(a["end_sec"]) - sx(a["start_sec"]),
                GT_COLOR,
                title=a.get("label", ""),
            )
        for d in dets_by_video.get(vid, []):
            if d["score"] < min_score:
                continue
            x = sx(d["start_sec"])
            _bar(
                svg,
                x,
                y0 + 4 + BAR_HEIGHT + 4,
                sx(d["end_sec"]) - x,
                DET_COLOR,
                title=d.get("label", ""),
            )
            text = ET.SubElement(svg, "text", x=f"{x:.2f}", y=f"{y0 + 4 + 2 * BAR_HEIGHT + 12}")
            text.set("font-size", "7")
            text.set("font-family", "sans-serif")
            text.set("fill", DET_COLOR)
            text.text = f"{d['score']:.2f}"

    body = ET.tostring(svg, encoding="unicode")
    Path(out_path).write_text('<?xml version="1.0" encoding="UTF-8"?>\n' + body)
