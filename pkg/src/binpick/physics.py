"""Minimal rigid-body engine for pick simulation.

Bodies carry compound oriented-box collision shapes (the approximate model);
exact meshes never enter the solver.  Integration is semi-implicit Euler, the
contact solver is sequential impulses with Coulomb friction, and penetration
is cleaned up by positional pseudo-impulses after integration.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .backend import get_kernels
from .errors import InstabilityError, StrokeViolationError
from .rotation import IDENTITY_QUAT, quat_integrate, quat_to_mat

DYNAMIC = "dynamic"
KINEMATIC = "kinematic"
STATIC = "static"


@dataclass
class PhysicsParams:
    dt: float = 1.0 / 240.0
    gravity: float = 9.81
    solver_iterations: int = 10
    friction: float = 0.6
    restitution: float = 0.0
    slop: float = 1e-4
    position_beta: float = 0.25
    position_iterations: int = 4
    max_correction: float = 0.005
    bounce_threshold: float = 0.05
    speed_cap: float = 50.0
    linear_damping: float = 0.05  # 1/s
    angular_damping: float = 1.0  # 1/s
    # contacts against kinematic bodies (gripper fingers) act like a stiff
    # pad: penetration feeds a separation-velocity bias so a static squeeze
    # keeps producing normal force and hence a friction budget
    pad_beta: float = 0.2
    pad_bias_cap: float = 0.25

    def validate(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.friction < 0 or not (0.0 <= self.restitution <= 1.0):
            raise ValueError("bad material parameters")


@dataclass
class ContactPoint:
    point: np.ndarray
    normal: np.ndarray
    penetration: float
    body_a: int
    body_b: int


class RigidBody:
    """One simulated body with a compound of oriented boxes as collision shape."""

    def __init__(self, name, kind, boxes, mass=None, density=1000.0,
                 pos=None, quat=None, mesh=None):
        """boxes: list of (local_center(3), local_rot(3,3), half_extents(3))."""
        self.name = name
        self.kind = kind
        self.pos = np.zeros(3) if pos is None else np.asarray(pos, dtype=float)
        self.quat = IDENTITY_QUAT.copy() if quat is None else np.asarray(quat, dtype=float)
        self.vel = np.zeros(3)
        self.omega = np.zeros(3)
        self.mesh = mesh  # exact TriMesh in body frame, render only
        self.hulls = None  # optional ConvexShape list for exact-hull collision
        self.box_centers = np.array([b[0] for b in boxes], dtype=float)
        self.box_rots = np.array([b[1] for b in boxes], dtype=float)
        self.box_halves = np.array([b[2] for b in boxes], dtype=float)
        self._set_mass_properties(mass, density)

    def _set_mass_properties(self, mass, density):
        vols = 8.0 * np.prod(self.box_halves, axis=1)
        total_vol = float(vols.sum())
        if self.kind != DYNAMIC:
            self.mass = 0.0
            self.inv_mass = 0.0
            self.inertia_body = np.zeros((3, 3))
            self.inv_inertia_body = np.zeros((3, 3))
            return
        self.mass = float(mass) if mass is not None else density * total_vol
        if self.mass <= 0:
            raise ValueError("dynamic body needs positive mass")
        self.inv_mass = 1.0 / self.mass
        # compound inertia: per-box slab inertia rotated into body frame plus
        # the parallel-axis term, uniform density over the box volumes
        inertia = np.zeros((3, 3))
        for c, r, h, v in zip(self.box_centers, self.box_rots, self.box_halves, vols):
            m = self.mass * v / total_vol
            ex, ey, ez = 2.0 * h
            local = np.diag([m / 12.0 * (ey**2 + ez**2),
                             m / 12.0 * (ex**2 + ez**2),
                             m / 12.0 * (ex**2 + ey**2)])
            iw = r @ local @ r.T
            d = np.asarray(c)
            inertia += iw + m * ((d @ d) * np.eye(3) - np.outer(d, d))
        self.inertia_body = inertia
        self.inv_inertia_body = np.linalg.inv(inertia)

    @classmethod
    def from_approx_model(cls, name, model, mesh=None, **kw):
        boxes = [(b.center, quat_to_mat(b.orientation), b.half_extents)
                 for b in model.boxes]
        return cls(name, DYNAMIC, boxes, mesh=mesh, **kw)

    @classmethod
    def static_box(cls, name, center, half):
        return cls(name, STATIC, [(np.zeros(3), np.eye(3), np.asarray(half, dtype=float))],
                   pos=np.asarray(center, dtype=float))

    def rotation(self):
        return quat_to_mat(self.quat)

    def world_shapes(self):
        """World-space (centers, rotations, halves) of this body's boxes."""
        r = self.rotation()
        centers = self.pos + self.box_centers @ r.T
        rots = np.einsum("ij,kjl->kil", r, self.box_rots)
        return centers, rots, self.box_halves

    def snapshot(self):
        return {
            "name": self.name, "kind": self.kind,
            "pos": self.pos.tolist(), "quat": self.quat.tolist(),
            "vel": self.vel.tolist(), "omega": self.omega.tolist(),
        }


class Gripper:
    """Kinematic two-finger parallel-jaw gripper.

    Fingers are mirror images about the base axis at every step; closing is
    symmetric and stops when either finger's contact impulse exceeds the grip
    threshold.  During ascent the commanded width keeps creeping inward while
    the measured finger impulse stays below the threshold, which acts like a
    force-controlled squeeze and lets friction carry the object.
    """

    IDLE, DESCEND, CLOSE, ASCEND, BLOCKED = "idle", "descend", "close", "ascend", "blocked"

    def __init__(self, base_xy, yaw, width, z,
                 finger_thickness=0.008, finger_depth=0.012, finger_length=0.04,
                 stroke=(0.0, 0.09), grip_impulse=5.0 / 240.0,
                 block_impulse=None, speed=0.25, close_speed=0.08,
                 squeeze_speed=0.01, squeeze_allowance=0.003):
        self.base = np.array([base_xy[0], base_xy[1], z], dtype=float)
        self.yaw = float(yaw)
        if not (stroke[0] <= width <= stroke[1]):
            raise StrokeViolationError(f"opening width {width} outside stroke {stroke}")
        self.width = float(width)
        self.stroke = stroke
        self.dims = (finger_thickness, finger_depth, finger_length)
        self.grip_impulse = grip_impulse
        self.block_impulse = block_impulse if block_impulse is not None else 4.0 * grip_impulse
        self.speed = speed
        self.close_speed = close_speed
        self.squeeze_speed = squeeze_speed
        self.squeeze_allowance = squeeze_allowance
        self.grip_width = None  # width at which closing was stopped by force
        self.mode = self.IDLE
        self.target = 0.0
        self.blocked_streak = 0
        self.fingers = [self._make_finger(i) for i in (0, 1)]
        self._sync_fingers()

    def _make_finger(self, index):
        t, d, length = self.dims
        half = np.array([t / 2.0, d / 2.0, length / 2.0])
        body = RigidBody(f"finger{index}", KINEMATIC,
                         [(np.zeros(3), np.eye(3), half)])
        return body

    def _finger_positions(self):
        u = np.array([np.cos(self.yaw), np.sin(self.yaw), 0.0])
        t = self.dims[0]
        offset = (self.width + t) / 2.0
        return self.base - offset * u, self.base + offset * u

    def _sync_fingers(self, dt=None):
        """Place fingers (dt None) or set velocities so integration lands there."""
        rz = np.array([[np.cos(self.yaw), -np.sin(self.yaw), 0.0],
                       [np.sin(self.yaw), np.cos(self.yaw), 0.0],
                       [0.0, 0.0, 1.0]])
        from .rotation import mat_to_quat
        q = mat_to_quat(rz)
        for body, p in zip(self.fingers, self._finger_positions()):
            if dt is None:
                body.pos = p.copy()
            else:
                body.vel = (p - body.pos) / dt
            body.quat = q.copy()

    def fingertip_z(self):
        return self.base[2] - self.dims[2] / 2.0

    def command(self, action, magnitude, floor_z=None):
        """Set the motion target: descend/ascend by distance, close to width."""
        if action == "descend":
            target = self.base[2] - magnitude
            if floor_z is not None and target - self.dims[2] / 2.0 < floor_z - 1e-9:
                raise StrokeViolationError("descend target puts fingers below the tray floor")
            self.mode = self.DESCEND
            self.target = target
        elif action == "ascend":
            self.mode = self.ASCEND
            self.target = self.base[2] + magnitude
        elif action == "close":
            if magnitude < self.stroke[0] - 1e-12:
                raise StrokeViolationError("close target below minimum stroke")
            self.mode = self.CLOSE
            self.target = max(magnitude, self.stroke[0])
        else:
            raise ValueError(f"unknown gripper action {action!r}")
        self.blocked_streak = 0

    def done(self):
        return self.mode in (self.IDLE, self.BLOCKED)

    def pre_step(self, dt, finger_impulses):
        """Advance commanded pose one step; finger_impulses is the previous
        step's max per-finger accumulated normal impulse."""
        imp = max(finger_impulses) if len(finger_impulses) else 0.0
        if self.mode == self.DESCEND:
            if imp > self.block_impulse:
                self.blocked_streak += 1
                if self.blocked_streak >= 3:
                    self.mode = self.BLOCKED
            else:
                self.blocked_streak = 0
                step = min(self.speed * dt, self.base[2] - self.target)
                self.base[2] -= step
                if self.base[2] <= self.target + 1e-12:
                    self.mode = self.IDLE
        elif self.mode == self.CLOSE:
            if imp > self.grip_impulse:
                self.grip_width = self.width
                self.mode = self.IDLE
            else:
                step = min(2.0 * self.close_speed * dt, self.width - self.target)
                self.width -= step
                if self.width <= self.target + 1e-12:
                    self.mode = self.IDLE
        elif self.mode == self.ASCEND:
            # force-controlled squeeze while lifting: creep inward while the
            # sensed impulse is low, but never far below the grip width, so a
            # held object is not crushed and ejected
            floor_w = self.stroke[0]
            if self.grip_width is not None:
                floor_w = max(floor_w, self.grip_width - self.squeeze_allowance)
            if imp < self.grip_impulse and self.width > floor_w:
                self.width = max(self.width - 2.0 * self.squeeze_speed * dt, floor_w)
            step = min(self.speed * dt, self.target - self.base[2])
            self.base[2] += step
            if self.base[2] >= self.target - 1e-12:
                self.mode = self.IDLE
        self._sync_fingers(dt)


class World:
    """Simulation world: tray, pile bodies, and optionally a gripper."""

    def __init__(self, params=None, tray_size=(0.20, 0.20), wall_height=0.08,
                 wall_thickness=0.01, floor_z=0.0):
        self.params = params or PhysicsParams()
        self.params.validate()
        self.tray_size = tray_size
        self.floor_z = floor_z
        self.bodies = []
        self.gripper = None
        self.last_contacts = []
        self.last_body_impulse = np.zeros(0)
        self.steps_done = 0
        self._build_tray(tray_size, wall_height, wall_thickness, floor_z)

    def _build_tray(self, size, wall_h, wall_t, floor_z):
        sx, sy = size[0] / 2.0, size[1] / 2.0
        floor_half = 0.01
        self.add_body(RigidBody.static_box("tray_floor", [0, 0, floor_z - floor_half],
                                           [sx + wall_t, sy + wall_t, floor_half]))
        # wide ground plane so bodies that bounce over a wall land and stop
        # instead of falling without bound
        self.add_body(RigidBody.static_box("ground", [0, 0, floor_z - 3 * floor_half],
                                           [0.5, 0.5, floor_half]))
        wz = floor_z + wall_h / 2.0
        for name, c, h in [
            ("wall_x0", [-(sx + wall_t / 2), 0, wz], [wall_t / 2, sy + wall_t, wall_h / 2]),
            ("wall_x1", [sx + wall_t / 2, 0, wz], [wall_t / 2, sy + wall_t, wall_h / 2]),
            ("wall_y0", [0, -(sy + wall_t / 2), wz], [sx + wall_t, wall_t / 2, wall_h / 2]),
            ("wall_y1", [0, sy + wall_t / 2, wz], [sx + wall_t, wall_t / 2, wall_h / 2]),
        ]:
            self.add_body(RigidBody.static_box(name, c, h))

    def add_body(self, body):
        self.bodies.append(body)
        return len(self.bodies) - 1

    def attach_gripper(self, gripper):
        self.gripper = gripper
        for f in gripper.fingers:
            self.add_body(f)

    def detach_gripper(self):
        if self.gripper is None:
            return
        for f in self.gripper.fingers:
            self.bodies.remove(f)
        self.gripper = None

    def dynamic_bodies(self):
        return [b for b in self.bodies if b.kind == DYNAMIC]

    def _gather_shapes(self):
        owners, centers, rots, halves = [], [], [], []
        for bi, b in enumerate(self.bodies):
            c, r, h = b.world_shapes()
            owners.extend([bi] * len(c))
            centers.append(c)
            rots.append(r)
            halves.append(h)
        return (np.array(owners, dtype=np.intp), np.vstack(centers),
                np.vstack(rots), np.vstack(halves))

    def _candidate_pairs(self, owners, centers, rots, halves, margin=1e-4):
        ext = np.einsum("kij,kj->ki", np.abs(rots), halves)
        lo = centers - ext - margin
        hi = centers + ext + margin
        ns = len(owners)
        awake = np.array([self.bodies[o].kind == DYNAMIC for o in owners])
        pairs = []
        for i in range(ns):
            for j in range(i + 1, ns):
                if owners[i] == owners[j]:
                    continue
                if not (awake[i] or awake[j]):
                    continue
                if (lo[i] > hi[j]).any() or (lo[j] > hi[i]).any():
                    continue
                pairs.append((i, j))
        return np.array(pairs, dtype=np.intp).reshape(-1, 2)

    def _narrow_phase(self, kr, owners, centers, rots, halves, pairs):
        """Contacts for candidate shape pairs as flat (ba, bb, pts, nrm, dep).

        Pairs where either body carries exact convex hulls go through the
        hull reference path; everything else uses the box kernel.
        """
        ba_l, bb_l, pts_l, nrm_l, dep_l = [], [], [], [], []
        hull_bodies = {i for i, b in enumerate(self.bodies) if b.hulls is not None}
        if hull_bodies:
            box_pairs = []
            body_pairs = set()
            for i, j in pairs:
                oa, ob = int(owners[i]), int(owners[j])
                if oa in hull_bodies or ob in hull_bodies:
                    body_pairs.add((oa, ob) if oa < ob else (ob, oa))
                else:
                    box_pairs.append((i, j))
            pairs = np.array(box_pairs, dtype=np.intp).reshape(-1, 2)
            from .hulls import collide_hull_pair
            for oa, ob in sorted(body_pairs):
                for points, normal, depths in collide_hull_pair(
                        self.bodies[oa], self.bodies[ob]):
                    for k in range(len(points)):
                        ba_l.append(oa)
                        bb_l.append(ob)
                        pts_l.append(points[k])
                        nrm_l.append(normal)
                        dep_l.append(depths[k])
        if len(pairs):
            idx, pts, nrm, dep = kr.collide_pairs(centers, rots, halves, pairs)
            for k in range(len(idx)):
                sa, sb = pairs[idx[k]]
                ba_l.append(int(owners[sa]))
                bb_l.append(int(owners[sb]))
                pts_l.append(pts[k])
                nrm_l.append(nrm[k])
                dep_l.append(dep[k])
        if not ba_l:
            return (np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp),
                    np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
        return (np.array(ba_l, dtype=np.intp), np.array(bb_l, dtype=np.intp),
                np.array(pts_l), np.array(nrm_l), np.array(dep_l))

    def contacts(self):
        """Current contact points without advancing time."""
        kr = get_kernels()
        owners, centers, rots, halves = self._gather_shapes()
        pairs = self._candidate_pairs(owners, centers, rots, halves)
        if len(pairs) == 0:
            return []
        ba, bb, pts, nrm, dep = self._narrow_phase(kr, owners, centers, rots,
                                                   halves, pairs)
        return [ContactPoint(point=pts[k], normal=nrm[k], penetration=dep[k],
                             body_a=int(ba[k]), body_b=int(bb[k]))
                for k in range(len(ba))]

    def step(self):
        kr = get_kernels()
        p = self.params
        nb = len(self.bodies)

        if self.gripper is not None:
            fidx = [self.bodies.index(f) for f in self.gripper.fingers]
            prev = (self.last_body_impulse[fidx]
                    if len(self.last_body_impulse) == nb else np.zeros(2))
            self.gripper.pre_step(p.dt, prev)

        owners, centers, rots, halves = self._gather_shapes()
        pairs = self._candidate_pairs(owners, centers, rots, halves)

        inv_m = np.array([b.inv_mass for b in self.bodies])
        rworld = [b.rotation() for b in self.bodies]
        inv_i = np.array([r @ b.inv_inertia_body @ r.T if b.kind == DYNAMIC
                          else np.zeros((3, 3))
                          for b, r in zip(self.bodies, rworld)])
        vel = np.array([b.vel for b in self.bodies])
        omg = np.array([b.omega for b in self.bodies])

        # gravity and damping on dynamic bodies
        lin_damp = 1.0 / (1.0 + p.linear_damping * p.dt)
        ang_damp = 1.0 / (1.0 + p.angular_damping * p.dt)
        for bi, b in enumerate(self.bodies):
            if b.kind == DYNAMIC:
                vel[bi, 2] -= p.gravity * p.dt
                vel[bi] *= lin_damp
                omg[bi] *= ang_damp

        body_imp = np.zeros(nb)
        contact_meta = None
        if len(pairs):
            ba, bb, pts, nrm, dep = self._narrow_phase(kr, owners, centers,
                                                       rots, halves, pairs)
            if len(ba):
                pos_arr = np.array([b.pos for b in self.bodies])
                ra = pts - pos_arr[ba]
                rb = pts - pos_arr[bb]
                kin = np.array([self.bodies[i].kind == KINEMATIC for i in ba]) \
                    | np.array([self.bodies[i].kind == KINEMATIC for i in bb])
                bias_extra = np.where(
                    kin,
                    np.minimum(p.pad_beta * np.maximum(dep - p.slop, 0.0) / p.dt,
                               p.pad_bias_cap),
                    0.0)
                accn = kr.solve_velocity(inv_m, inv_i, vel, omg, ba, bb, ra, rb,
                                         nrm, dep, p.friction, p.restitution,
                                         p.solver_iterations, p.bounce_threshold,
                                         bias_extra)
                np.add.at(body_imp, ba, accn)
                np.add.at(body_imp, bb, accn)
                contact_meta = (ba, bb, ra, rb, nrm, dep)
                self.last_contacts = [
                    ContactPoint(pts[k], nrm[k], dep[k], int(ba[k]), int(bb[k]))
                    for k in range(len(ba))]
            else:
                self.last_contacts = []
        else:
            self.last_contacts = []
        self.last_body_impulse = body_imp

        # integrate (kinematic bodies follow their commanded velocity exactly)
        for bi, b in enumerate(self.bodies):
            if b.kind == DYNAMIC:
                b.vel = vel[bi]
                b.omega = omg[bi]
                b.pos = b.pos + b.vel * p.dt
                b.quat = quat_integrate(b.quat, b.omega, p.dt)
            elif b.kind == KINEMATIC:
                b.pos = b.pos + b.vel * p.dt

        if contact_meta is not None:
            ba, bb, ra, rb, nrm, dep = contact_meta
            dpos, drot = kr.position_correct(inv_m, inv_i, nb, ba, bb, ra, rb,
                                             nrm, dep, p.slop, p.position_beta,
                                             p.position_iterations, p.max_correction)
            for bi, b in enumerate(self.bodies):
                if b.kind == DYNAMIC:
                    b.pos = b.pos + dpos[bi]
                    ang = np.linalg.norm(drot[bi])
                    if ang > 1e-12:
                        b.quat = quat_integrate(b.quat, drot[bi], 1.0)

        for b in self.dynamic_bodies():
            if np.linalg.norm(b.vel) > p.speed_cap:
                raise InstabilityError(
                    f"body {b.name} exceeded speed cap ({np.linalg.norm(b.vel):.1f} m/s)")
        self.steps_done += 1

    def run(self, steps):
        for _ in range(steps):
            self.step()

    def is_quiescent(self, v_eps=1e-3, w_eps=1e-2):
        return all(np.linalg.norm(b.vel) < v_eps and np.linalg.norm(b.omega) < w_eps
                   for b in self.dynamic_bodies())

    def settle(self, max_steps, v_eps=1e-3, w_eps=1e-2, check_every=20, min_steps=40):
        """Step until quiescent; returns True when quiescence was reached."""
        for s in range(max_steps):
            self.step()
            if s >= min_steps and (s % check_every == 0) and self.is_quiescent(v_eps, w_eps):
                return True
        return self.is_quiescent(v_eps, w_eps)

    def max_penetration(self):
        return max((c.penetration for c in self.last_contacts), default=0.0)

    def kinetic_energy(self):
        e = 0.0
        for b in self.dynamic_bodies():
            r = b.rotation()
            iw = r @ b.inertia_body @ r.T
            e += 0.5 * b.mass * (b.vel @ b.vel) + 0.5 * b.omega @ (iw @ b.omega)
        return e

    def snapshot_json(self):
        return json.dumps({"step": self.steps_done,
                           "bodies": [b.snapshot() for b in self.bodies]}, indent=2)
