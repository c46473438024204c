"""Minimal SVG line-chart writer for power curves (no plotting dependency)."""

from __future__ import annotations

from .simulate import TEST_NAMES, PowerTable

_COLORS = {
    "wald": "#1f77b4",
    "lm": "#2ca02c",
    "ar": "#7f7f7f",
    "combined": "#d62728",
}

_WIDTH, _HEIGHT = 640, 440
_LEFT, _RIGHT, _TOP, _BOTTOM = 60, 20, 20, 50


def _x_pos(value: float, lo: float, hi: float) -> float:
    span = hi - lo if hi > lo else 1.0
    return _LEFT + (value - lo) / span * (_WIDTH - _LEFT - _RIGHT)


def _y_pos(rate: float) -> float:
    return _TOP + (1.0 - rate) * (_HEIGHT - _TOP - _BOTTOM)


def render_power_svg(table: PowerTable, alpha_level: float = 0.05) -> str:
    """Render rejection rates against the null grid as a standalone SVG."""
    xs = [float(b) for b in table.beta0]
    lo, hi = min(xs), max(xs)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<rect x="{_LEFT}" y="{_TOP}" width="{_WIDTH - _LEFT - _RIGHT}" '
        f'height="{_HEIGHT - _TOP - _BOTTOM}" fill="none" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = _y_pos(tick)
        parts.append(
            f'<line x1="{_LEFT - 4}" y1="{y:.1f}" x2="{_LEFT}" y2="{y:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_LEFT - 8}" y="{y + 4:.1f}" font-size="12" '
            f'text-anchor="end">{tick:g}</text>'
        )
    y_alpha = _y_pos(alpha_level)
    parts.append(
        f'<line x1="{_LEFT}" y1="{y_alpha:.1f}" x2="{_WIDTH - _RIGHT}" '
        f'y2="{y_alpha:.1f}" stroke="#999999" stroke-dasharray="4 3"/>'
    )
    for value in xs:
        x = _x_pos(value, lo, hi)
        parts.append(
            f'<line x1="{x:.1f}" y1="{_HEIGHT - _BOTTOM}" x2="{x:.1f}" '
            f'y2="{_HEIGHT - _BOTTOM + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{_HEIGHT - _BOTTOM + 18}" font-size="11" '
            f'text-anchor="middle">{value:g}</text>'
        )
    parts.append(
        f'<text x="{(_LEFT + _WIDTH - _RIGHT) / 2:.1f}" y="{_HEIGHT - 12}" '
        f'font-size="13" text-anchor="middle">null value</text>'
    )
    parts.append(
        f'<text x="16" y="{(_TOP + _HEIGHT - _BOTTOM) / 2:.1f}" font-size="13" '
        f'text-anchor="middle" transform="rotate(-90 16 '
        f'{(_TOP + _HEIGHT - _BOTTOM) / 2:.1f})">rejection rate</text>'
    )
    for idx, name in enumerate(TEST_NAMES):
        points = " ".join(
            f"{_x_pos(x, lo, hi):.2f},{_y_pos(r):.2f}"
            for x, r in zip(xs, table.rates[:, idx])
        )
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{_COLORS[name]}" '
            f'stroke-width="2"/>'
        )
        ly = _TOP + 16 + 16 * idx
        lx = _WIDTH - _RIGHT - 120
        parts.append(
            f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" '
            f'stroke="{_COLORS[name]}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 30}" y="{ly + 4}" font-size="12">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
