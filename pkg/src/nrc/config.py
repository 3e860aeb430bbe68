"""Render configuration shared by the harness and the command line."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass
class RenderConfig:
    """Every knob of the frame loop.

    Defaults are desk-scale: 128x128 frames, 16-pixel initial tiles and
    ``n_batches * batch_size = 4096`` training records per frame. The
    termination constant, unbiased fraction, EMA decay and batch count use
    the method's published values.
    """

    width: int = 128
    height: int = 128
    frames: int = 512
    seed: int = 0
    c: float = 0.01
    ema_alpha: float = 0.99
    u_unbiased: float = 1.0 / 16.0
    n_batches: int = 4
    batch_size: int = 1024
    learning_rate: float = 1e-2
    loss_eps: float = 0.01
    tile_size: int = 16
    target_records: int | None = None
    adaptive_tiles: bool = True
    self_train: bool = True
    ema_printed_form: bool = False
    accumulate: bool = False
    max_depth: int = 32
    rr_start: int = 3
    output_dir: str | None = None
    write_frames: bool = True

    @property
    def records_per_frame(self) -> int:
        if self.target_records is not None:
            return self.target_records
        return self.n_batches * self.batch_size

    def validate(self) -> "RenderConfig":
        checks = [
            (self.width >= 1 and self.height >= 1, "resolution must be positive"),
            (self.frames >= 0, "frames must be >= 0"),
            (self.c > 0, "c must be positive"),
            (0.0 <= self.ema_alpha < 1.0, "ema_alpha must lie in [0, 1)"),
            (0.0 <= self.u_unbiased <= 1.0, "u_unbiased must lie in [0, 1]"),
            (self.n_batches >= 1 and self.batch_size >= 1, "n_batches and batch_size must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.loss_eps > 0, "loss_eps must be positive"),
            (1 <= self.tile_size, "tile_size must be >= 1"),
            (self.records_per_frame >= 1, "target_records must be >= 1"),
            (self.max_depth >= 2, "max_depth must be >= 2"),
            (self.rr_start >= 0, "rr_start must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]
