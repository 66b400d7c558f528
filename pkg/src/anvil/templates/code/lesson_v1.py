"""Fixed skeleton for generated lesson animations."""

from manim import (
    DOWN,
    LEFT,
    ORIGIN,
    RIGHT,
    UP,
    Circle,
    FadeIn,
    FadeOut,
    Indicate,
    Rectangle,
    Scene,
    SVGMobject,
    Text,
)

# --- anvil utilities v1 (do not modify) ---
FRAME_W = 14.0
FRAME_H = 8.0

REGION_COORDS = {
    "top_left": (-FRAME_W / 3, FRAME_H / 3),
    "top_center": (0.0, FRAME_H / 3),
    "top_right": (FRAME_W / 3, FRAME_H / 3),
    "center_left": (-FRAME_W / 3, 0.0),
    "center": (0.0, 0.0),
    "center_right": (FRAME_W / 3, 0.0),
    "bottom_left": (-FRAME_W / 3, -FRAME_H / 3),
    "bottom_center": (0.0, -FRAME_H / 3),
    "bottom_right": (FRAME_W / 3, -FRAME_H / 3),
}


def region_point(placement):
    """Screen point for a named region or an {x, y} unit-square position."""
    if isinstance(placement, str):
        x, y = REGION_COORDS[placement]
    else:
        x = (float(placement["x"]) - 0.5) * FRAME_W
        y = (0.5 - float(placement["y"])) * FRAME_H
    return x * RIGHT + y * UP


def place(mobject, placement):
    mobject.move_to(region_point(placement))
    return mobject


def load_svg_actor(filename, scale=1.0):
    return SVGMobject(filename).scale(scale)


def make_shape_actor(label, width=2.0, height=1.2):
    box = Rectangle(width=width, height=height)
    tag = Text(label).scale(0.5)
    tag.move_to(box.get_center())
    return box, tag


def make_text_actor(text, scale=0.7):
    return Text(text).scale(scale)


def appear(scene, mobject):
    scene.play(FadeIn(mobject))


def fade(scene, mobject):
    scene.play(FadeOut(mobject))


def move_to(scene, mobject, placement):
    scene.play(mobject.animate.move_to(region_point(placement)))


def highlight(scene, mobject):
    scene.play(Indicate(mobject))


def show_caption(scene, text, hold=1.0):
    caption = Text(text).scale(0.6)
    caption.move_to(region_point("bottom_center") + 0.6 * DOWN)
    scene.play(FadeIn(caption))
    scene.wait(hold)
    scene.play(FadeOut(caption))
# --- end anvil utilities v1 ---


class Lesson(Scene):
    """Generated construct() implements the screenplay scene by scene."""

    def construct(self):
        raise NotImplementedError("generated code replaces this method body")
