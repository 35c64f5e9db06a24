"""Model variants: the main cross-displacement/point models, ablations and regression baselines."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Variant:
    name: str
    target: str  # "disp": diffuse/regress displacements, "pos": goal positions
    object_frames: bool = True  # centre action and anchor separately
    scene: bool = False  # merge action and anchor into one cloud, no cross-attention
    action_context: bool = True  # include action point features
    regression: bool = False  # no diffusion, one MSE-trained prediction

    @property
    def diffusion(self) -> bool:
        return not self.regression


VARIANTS: dict[str, Variant] = {
    v.name: v
    for v in (
        Variant("CD", "disp"),
        Variant("CP", "pos"),
        Variant("SD", "disp", scene=True),
        Variant("SP", "pos", scene=True),
        Variant("CD-W", "disp", object_frames=False),
        Variant("CP-W", "pos", object_frames=False),
        Variant("CD-NAC", "disp", action_context=False),
        Variant("CP-NAC", "pos", action_context=False),
        Variant("RD", "disp", regression=True),
        Variant("RP", "pos", regression=True),
    )
}


def get_variant(name: str) -> Variant:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None
