"""Five synthetic pixel-grid games with a shared 4-action agent interface.

Each task renders a (size x size) grayscale frame in [0,1] with its own
background texture and sprite set, exposes a raw integer score stream, and
advances one internal frame per ``tick``. Hidden per-task action tables map
the agent's {NOOP, FIRE, RIGHT, LEFT} onto whatever the game uses internally;
``chase`` has a 5-action internal space (its UP slot is unreachable through
the mapping), the rest are identity-mapped.

All randomness flows through one generator seeded at construction, so a
(name, seed) pair pins the dynamics across episodes.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

Array = np.ndarray

# agent-visible action semantics, shared by every task
NOOP, FIRE, RIGHT, LEFT = 0, 1, 2, 3

IDENTITY_MAPPING = (0, 1, 2, 3)


class Task:
    """Base class: owns the rng, the cached background, and the agent column."""

    name = "task"
    action_mapping: tuple[int, int, int, int] = IDENTITY_MAPPING
    n_internal_actions = 4
    # semantics of each internal action index, overridden where the internal
    # space differs from the agent's
    internal_semantics: dict[int, int] = {0: NOOP, 1: FIRE, 2: RIGHT, 3: LEFT}

    def __init__(self, seed: int, size: int = 12):
        if size < 8:
            raise ContractError(f"{self.name}: grid size must be >= 8, got {size}")
        self.size = size
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._background = self._make_background()
        self.agent_col = size // 2
        self.tick_count = 0
        self.reset()

    # -- per-task hooks

    def _make_background(self) -> Array:
        return np.full((self.size, self.size), 0.05)

    def _reset_episode(self) -> None:
        raise NotImplementedError

    def _advance(self, semantic_action: int) -> float:
        raise NotImplementedError

    def _draw_sprites(self, frame: Array) -> None:
        raise NotImplementedError

    # -- shared interface

    def reset(self) -> None:
        self.agent_col = self.size // 2
        self.tick_count = 0
        self._reset_episode()

    def tick(self, internal_action: int) -> tuple[float, bool]:
        """One internal frame. Returns (raw score delta, terminal)."""
        if not 0 <= internal_action < self.n_internal_actions:
            raise ContractError(
                f"{self.name}: internal action {internal_action} out of range"
            )
        sem = self.internal_semantics.get(internal_action, NOOP)
        self.tick_count += 1
        return self._advance(sem)

    def render(self) -> Array:
        frame = self._background.copy()
        self._draw_sprites(frame)
        return frame

    def _move_agent(self, sem: int) -> None:
        if sem == RIGHT:
            self.agent_col = min(self.size - 1, self.agent_col + 1)
        elif sem == LEFT:
            self.agent_col = max(0, self.agent_col - 1)


class ChaseTask(Task):
    """Shoot a drifting target at the top of vertical lanes; +1 per hit."""

    name = "chase"
    action_mapping = (0, 1, 3, 4)
    n_internal_actions = 5
    internal_semantics = {0: NOOP, 1: FIRE, 2: NOOP, 3: RIGHT, 4: LEFT}

    def _make_background(self) -> Array:
        cols = np.where(np.arange(self.size) % 2 == 0, 0.08, 0.16)
        return np.tile(cols, (self.size, 1))

    def _reset_episode(self) -> None:
        self.target_col = int(self._rng.integers(0, self.size))
        self.drift_dir = 1 if self._rng.random() < 0.5 else -1
        self.bullet: tuple[int, int] | None = None

    def _advance(self, sem: int) -> float:
        reward = 0.0
        self._move_agent(sem)
        if sem == FIRE and self.bullet is None:
            self.bullet = (self.size - 2, self.agent_col)
        if self.bullet is not None:
            row, col = self.bullet
            row -= 2
            if row <= 1:
                if col == self.target_col:
                    reward += 1.0
                    self.target_col = int(self._rng.integers(0, self.size))
                self.bullet = None
            else:
                self.bullet = (row, col)
        if self.tick_count % 3 == 0:
            if self._rng.random() < 0.2:
                self.drift_dir = -self.drift_dir
            nxt = self.target_col + self.drift_dir
            if nxt < 0 or nxt >= self.size:
                self.drift_dir = -self.drift_dir
                nxt = self.target_col + self.drift_dir
            self.target_col = nxt
        return reward, False

    def _draw_sprites(self, frame: Array) -> None:
        frame[1, self.target_col] = 0.85
        if self.bullet is not None:
            frame[self.bullet[0], self.bullet[1]] = 0.6
        frame[self.size - 1, self.agent_col] = 1.0


class SwarmTask(Task):
    """A marching block of invaders; shoot them (+1 each, +3 wave bonus),
    lose (-1, terminal) if any invader reaches the agent row."""

    name = "swarm"

    def _make_background(self) -> Array:
        r, c = np.indices((self.size, self.size))
        return np.where((r + c) % 2 == 0, 0.06, 0.12)

    def _spawn_wave(self) -> None:
        self.block_w = max(3, self.size // 2)
        self.block_r = 1
        self.block_c = int(self._rng.integers(0, self.size - self.block_w + 1))
        self.march_dir = 1 if self._rng.random() < 0.5 else -1
        self.alive = np.ones((2, self.block_w), dtype=bool)

    def _reset_episode(self) -> None:
        self._spawn_wave()
        self.bullet: tuple[int, int] | None = None

    def _advance(self, sem: int) -> float:
        reward = 0.0
        self._move_agent(sem)
        if sem == FIRE and self.bullet is None:
            self.bullet = (self.size - 2, self.agent_col)
        if self.bullet is not None:
            row, col = self.bullet
            hit = False
            for r in (row - 1, row - 2):
                br = r - self.block_r
                bc = col - self.block_c
                if 0 <= br < 2 and 0 <= bc < self.block_w and self.alive[br, bc]:
                    self.alive[br, bc] = False
                    reward += 1.0
                    hit = True
                    break
            if hit or row - 2 < 0:
                self.bullet = None
            else:
                self.bullet = (row - 2, col)
        if self.tick_count % 4 == 0:
            nxt = self.block_c + self.march_dir
            if nxt < 0 or nxt + self.block_w > self.size:
                self.march_dir = -self.march_dir
                self.block_r += 1
            else:
                self.block_c = nxt
        if not self.alive.any():
            reward += 3.0
            self._spawn_wave()
        if self.block_r + 1 >= self.size - 1:
            return reward - 1.0, True
        return reward, False

    def _draw_sprites(self, frame: Array) -> None:
        rows, cols = np.nonzero(self.alive)
        frame[rows + self.block_r, cols + self.block_c] = 0.8
        if self.bullet is not None:
            frame[self.bullet[0], self.bullet[1]] = 0.55
        frame[self.size - 1, self.agent_col] = 1.0


class VolleyTask(Task):
    """Keep a bouncing ball in play with a 3-wide paddle: +1 per return,
    -1 per miss (ball is re-served)."""

    name = "volley"

    def _make_background(self) -> Array:
        bg = np.full((self.size, self.size), 0.04)
        bg[0, :] = 0.3
        bg[:, 0] = 0.3
        bg[:, -1] = 0.3
        return bg

    def _serve(self) -> None:
        self.ball_r = 1
        self.ball_c = int(self._rng.integers(1, self.size - 1))
        self.ball_dr = 1
        self.ball_dc = 1 if self._rng.random() < 0.5 else -1

    def _reset_episode(self) -> None:
        self._serve()
        self.agent_col = max(1, min(self.size - 2, self.agent_col))

    def _move_agent(self, sem: int) -> None:
        # paddle center must keep the 3-wide paddle on the board
        if sem == RIGHT:
            self.agent_col = min(self.size - 2, self.agent_col + 1)
        elif sem == LEFT:
            self.agent_col = max(1, self.agent_col - 1)

    def _advance(self, sem: int) -> float:
        reward = 0.0
        self._move_agent(sem)
        if self.tick_count % 2 == 0:  # ball moves every other frame
            self.ball_r += self.ball_dr
            self.ball_c += self.ball_dc
            if self.ball_c <= 0:
                self.ball_c = 1
                self.ball_dc = 1
            elif self.ball_c >= self.size - 1:
                self.ball_c = self.size - 2
                self.ball_dc = -1
            if self.ball_r <= 0:
                self.ball_r = 1
                self.ball_dr = 1
            elif self.ball_r >= self.size - 1:
                if abs(self.ball_c - self.agent_col) <= 1:
                    reward += 1.0
                    self.ball_r = self.size - 2
                    self.ball_dr = -1
                else:
                    reward -= 1.0
                    self._serve()
        return reward, False

    def _draw_sprites(self, frame: Array) -> None:
        frame[self.size - 1, self.agent_col - 1 : self.agent_col + 2] = 0.7
        frame[self.ball_r, self.ball_c] = 1.0


class DodgeTask(Task):
    """Falling hazards: +1 for each hazard that lands elsewhere, -1 and
    terminal on collision. FIRE does nothing here."""

    name = "dodge"
    spawn_interval = 3

    def _make_background(self) -> Array:
        r, c = np.indices((self.size, self.size))
        return np.where((r + c) % 3 == 0, 0.14, 0.05)

    def _reset_episode(self) -> None:
        self.hazards: list[list[int]] = []

    def _advance(self, sem: int) -> float:
        reward = 0.0
        self._move_agent(sem)
        if self.tick_count % self.spawn_interval == 0:
            self.hazards.append([0, int(self._rng.integers(0, self.size))])
        done = False
        kept: list[list[int]] = []
        for hz in self.hazards:
            hz[0] += 1
            if hz[0] >= self.size - 1:
                if hz[1] == self.agent_col:
                    reward -= 1.0
                    done = True
                else:
                    reward += 1.0
            else:
                kept.append(hz)
        self.hazards = kept
        return reward, done

    def _draw_sprites(self, frame: Array) -> None:
        for row, col in self.hazards:
            frame[row, col] = 0.9
        frame[self.size - 1, self.agent_col] = 1.0


class RaidTask(Task):
    """Planes cross overhead dropping bombs; shooting a plane scores +2 raw,
    a bomb on the agent costs -1. Episodes end only at the step cap."""

    name = "raid"
    plane_interval = 5
    bomb_interval = 7

    def _make_background(self) -> Array:
        rows = np.where(np.arange(self.size) % 2 == 0, 0.05, 0.11)
        return np.tile(rows[:, None], (1, self.size))

    def _reset_episode(self) -> None:
        self.planes: list[list[int]] = []  # [row, col, dir]
        self.bombs: list[list[int]] = []
        self.bullet: tuple[int, int] | None = None

    def _advance(self, sem: int) -> float:
        reward = 0.0
        self._move_agent(sem)
        if sem == FIRE and self.bullet is None:
            self.bullet = (self.size - 2, self.agent_col)
        if self.tick_count % self.plane_interval == 0:
            row = int(self._rng.integers(1, 4))
            direction = 1 if self._rng.random() < 0.5 else -1
            col = 0 if direction == 1 else self.size - 1
            self.planes.append([row, col, direction])
        kept_planes: list[list[int]] = []
        for plane in self.planes:
            plane[1] += plane[2]
            if 0 <= plane[1] < self.size:
                kept_planes.append(plane)
        self.planes = kept_planes
        if self.tick_count % self.bomb_interval == 0 and self.planes:
            src = self.planes[int(self._rng.integers(0, len(self.planes)))]
            self.bombs.append([src[0] + 1, src[1]])
        if self.bullet is not None:
            row, col = self.bullet
            hit = None
            for r in (row - 1, row - 2):
                for plane in self.planes:
                    if plane[0] == r and plane[1] == col:
                        hit = plane
                        break
                if hit is not None:
                    break
            if hit is not None:
                self.planes.remove(hit)
                reward += 2.0
                self.bullet = None
            elif row - 2 < 0:
                self.bullet = None
            else:
                self.bullet = (row - 2, col)
        kept_bombs: list[list[int]] = []
        for bomb in self.bombs:
            bomb[0] += 1
            if bomb[0] >= self.size - 1:
                if bomb[1] == self.agent_col:
                    reward -= 1.0
            else:
                kept_bombs.append(bomb)
        self.bombs = kept_bombs
        return reward, False

    def _draw_sprites(self, frame: Array) -> None:
        for row, col, _ in self.planes:
            frame[row, col] = 0.8
        for row, col in self.bombs:
            frame[row, col] = 0.6
        if self.bullet is not None:
            frame[self.bullet[0], self.bullet[1]] = 0.45
        frame[self.size - 1, self.agent_col] = 1.0


TASK_CLASSES: dict[str, type[Task]] = {
    cls.name: cls for cls in (ChaseTask, SwarmTask, VolleyTask, DodgeTask, RaidTask)
}
