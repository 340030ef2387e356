"""SceneRec forward pass and its exact reverse-mode gradient.

Two routes are provided on purpose:

* per-entity functions (``user_embed``, ``category_repr``, ``score`` ...) that
  compute one vector at a time and are easy to read, and
* :class:`SceneRec`, a vectorised batch engine with a hand-written backward
  pass, used for training and evaluation.

The tests hold the second against the first.

Row-vector convention in the batch engine: an affine map ``W x + b`` on a
stack of inputs is ``X @ W.T + b``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from .graph import Adjacency, GraphBundle


class Variant(str, enum.Enum):
    FULL = "full"
    NOITEM = "noitem"  # no item-item relations in the scene graph
    NOSCE = "nosce"    # no category / scene layers
    NOATT = "noatt"    # uniform neighbour weights

    @property
    def uses_scenes(self) -> bool:
        return self is not Variant.NOSCE

    @property
    def uses_items(self) -> bool:
        return self is not Variant.NOITEM

    @property
    def attentive(self) -> bool:
        return self in (Variant.FULL, Variant.NOITEM)


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

@dataclass
class ParameterSet:
    """All trainable tensors.  Field order is the checkpoint order."""

    E_u: np.ndarray   # users x d
    E_i: np.ndarray   # items x d
    E_c: np.ndarray   # categories x d
    E_s: np.ndarray   # scenes x d
    W_u: np.ndarray   # d x d     user aggregation
    b_u: np.ndarray
    W_iu: np.ndarray  # d x d     item from its users
    b_iu: np.ndarray
    W_ic: np.ndarray  # d x 2d    category from [scene part | category part]
    b_ic: np.ndarray
    W_ii: np.ndarray  # d x 2d    item from [category part | item part]
    b_ii: np.ndarray
    W_i1: np.ndarray  # d x 2d    item MLP, first layer
    b_i1: np.ndarray
    W_i2: np.ndarray  # d x d     item MLP, second layer
    b_i2: np.ndarray
    W_r1: np.ndarray  # d x 2d    scoring MLP, first layer
    b_r1: np.ndarray
    W_r2: np.ndarray  # 1 x d     scoring MLP, output layer
    b_r2: np.ndarray  # (1,)

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def shapes(cls, n_users: int, n_items: int, n_categories: int, n_scenes: int,
               d: int) -> dict[str, tuple[int, ...]]:
        return {
            "E_u": (n_users, d), "E_i": (n_items, d), "E_c": (n_categories, d), "E_s": (n_scenes, d),
            "W_u": (d, d), "b_u": (d,), "W_iu": (d, d), "b_iu": (d,),
            "W_ic": (d, 2 * d), "b_ic": (d,), "W_ii": (d, 2 * d), "b_ii": (d,),
            "W_i1": (d, 2 * d), "b_i1": (d,), "W_i2": (d, d), "b_i2": (d,),
            "W_r1": (d, 2 * d), "b_r1": (d,), "W_r2": (1, d), "b_r2": (1,),
        }

    @classmethod
    def zeros(cls, n_users, n_items, n_categories, n_scenes, d) -> "ParameterSet":
        return cls(**{k: np.zeros(s) for k, s in
                      cls.shapes(n_users, n_items, n_categories, n_scenes, d).items()})

    @classmethod
    def init(cls, n_users, n_items, n_categories, n_scenes, d,
             rng: np.random.Generator) -> "ParameterSet":
        """Tables and weights ~ U[-1/sqrt(d), 1/sqrt(d)], biases zero."""
        bound = 1.0 / np.sqrt(d)
        arrays = {}
        for name, shape in cls.shapes(n_users, n_items, n_categories, n_scenes, d).items():
            if name.startswith("b_"):
                arrays[name] = np.zeros(shape)
            else:
                arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(**arrays)

    @property
    def d(self) -> int:
        return self.W_u.shape[0]

    @property
    def counts(self) -> tuple[int, int, int, int]:
        return (self.E_u.shape[0], self.E_i.shape[0], self.E_c.shape[0], self.E_s.shape[0])

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self.names():
            yield name, getattr(self, name)

    def copy(self) -> "ParameterSet":
        return ParameterSet(**{k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(**{k: np.zeros_like(v) for k, v in self.items()})

    def sq_norm(self) -> float:
        return float(sum(np.sum(v * v) for _, v in self.items()))

    def check(self) -> None:
        expected = self.shapes(*self.counts, self.d)
        for name, arr in self.items():
            if arr.shape != expected[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    def equals(self, other: "ParameterSet") -> bool:
        """Bitwise equality of every tensor."""
        return all(a.shape == b.shape and a.tobytes() == b.tobytes()
                   for (_, a), (_, b) in zip(self.items(), other.items()))


def relu(x):
    return np.maximum(x, 0.0)


# --------------------------------------------------------------------------
# per-entity reference route
# --------------------------------------------------------------------------

def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, 0 if either vector is all zero."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x
    e = np.exp(x - x.max())
    return e / e.sum()


def _sum_rows(table: np.ndarray, idx) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros(table.shape[1])
    for k in idx:
        out = out + table[k]
    return out


def user_embed(u: int, params: ParameterSet, graph: GraphBundle) -> np.ndarray:
    s = _sum_rows(params.E_i, graph.bipartite.ui[u])
    return relu(params.W_u @ s + params.b_u)


def item_user_embed(i: int, params: ParameterSet, graph: GraphBundle) -> np.ndarray:
    s = _sum_rows(params.E_u, graph.bipartite.iu[i])
    return relu(params.W_iu @ s + params.b_iu)


def scene_sum(c: int, params: ParameterSet, graph: GraphBundle) -> np.ndarray:
    return _sum_rows(params.E_s, graph.scene.cat_scenes[c])


def item_scene_sum(i: int, params: ParameterSet, graph: GraphBundle) -> np.ndarray:
    return _sum_rows(params.E_s, graph.scene.item_scenes(i))


def category_attention_score(cp: int, cq: int, params: ParameterSet, graph: GraphBundle) -> float:
    return cosine(scene_sum(cp, params, graph), scene_sum(cq, params, graph))


def item_attention_score(ip: int, iq: int, params: ParameterSet, graph: GraphBundle) -> float:
    return cosine(item_scene_sum(ip, params, graph), item_scene_sum(iq, params, graph))


def category_attention(c: int, params: ParameterSet, graph: GraphBundle,
                       variant: Variant = Variant.FULL) -> np.ndarray:
    """Normalised weights over CC(c), in neighbour order."""
    nbrs = graph.scene.cc[c]
    if not Variant(variant).attentive:
        return np.full(len(nbrs), 1.0 / len(nbrs)) if len(nbrs) else np.zeros(0)
    return softmax([category_attention_score(c, q, params, graph) for q in nbrs])


def item_attention(i: int, params: ParameterSet, graph: GraphBundle,
                   variant: Variant = Variant.FULL) -> np.ndarray:
    """Normalised weights over II(i), in neighbour order."""
    nbrs = graph.scene.ii[i]
    if not Variant(variant).attentive:
        return np.full(len(nbrs), 1.0 / len(nbrs)) if len(nbrs) else np.zeros(0)
    return softmax([item_attention_score(i, q, params, graph) for q in nbrs])


def category_repr(c: int, params: ParameterSet, graph: GraphBundle,
                  variant: Variant = Variant.FULL) -> np.ndarray:
    h_s = scene_sum(c, params, graph)
    h_c = np.zeros(params.d)
    for w, q in zip(category_attention(c, params, graph, variant), graph.scene.cc[c]):
        h_c = h_c + w * params.E_c[q]
    return relu(params.W_ic @ np.concatenate([h_s, h_c]) + params.b_ic)


def item_scene_embed(i: int, params: ParameterSet, graph: GraphBundle,
                     variant: Variant = Variant.FULL) -> np.ndarray:
    variant = Variant(variant)
    d = params.d
    if variant.uses_scenes:
        h_c = category_repr(int(graph.scene.item_cat[i]), params, graph, variant)
    else:
        h_c = np.zeros(d)
    h_i = np.zeros(d)
    if variant.uses_items:
        for w, q in zip(item_attention(i, params, graph, variant), graph.scene.ii[i]):
            h_i = h_i + w * params.E_i[q]
    return relu(params.W_ii @ np.concatenate([h_c, h_i]) + params.b_ii)


def item_embed(i: int, params: ParameterSet, graph: GraphBundle,
               variant: Variant = Variant.FULL) -> np.ndarray:
    x = np.concatenate([item_user_embed(i, params, graph), item_scene_embed(i, params, graph, variant)])
    return params.W_i2 @ relu(params.W_i1 @ x + params.b_i1) + params.b_i2


def score(u: int, i: int, params: ParameterSet, graph: GraphBundle,
          variant: Variant = Variant.FULL) -> float:
    x = np.concatenate([user_embed(u, params, graph), item_embed(i, params, graph, variant)])
    h = relu(params.W_r1 @ x + params.b_r1)
    return float(params.W_r2[0] @ h + params.b_r2[0])


# --------------------------------------------------------------------------
# batch engine
# --------------------------------------------------------------------------

def _excl_cumsum(lens: np.ndarray) -> np.ndarray:
    out = np.zeros(len(lens) + 1, dtype=np.int64)
    np.cumsum(lens, out=out[1:])
    return out


@dataclass
class _Edges:
    """Neighbour lists of a subset of rows, flattened."""

    indptr: np.ndarray  # into the flattened edge arrays, one row per selected node
    owner: np.ndarray   # local row of each edge
    nbr: np.ndarray     # neighbour index of each edge

    @classmethod
    def gather(cls, adj: Adjacency, rows: np.ndarray) -> "_Edges":
        starts = adj.indptr[rows]
        lens = adj.indptr[rows + 1] - starts
        indptr = _excl_cumsum(lens)
        total = int(indptr[-1])
        pos = np.arange(total, dtype=np.int64) - np.repeat(indptr[:-1], lens) + np.repeat(starts, lens)
        return cls(indptr, np.repeat(np.arange(len(rows), dtype=np.int64), lens), adj.indices[pos])

    @classmethod
    def full(cls, adj: Adjacency) -> "_Edges":
        return cls(np.asarray(adj.indptr), adj.owners(), np.asarray(adj.indices))

    @property
    def n_rows(self) -> int:
        return len(self.indptr) - 1

    def segment_sum(self, vals: np.ndarray) -> np.ndarray:
        """Per-row sum of a per-edge scalar."""
        return np.bincount(self.owner, weights=vals, minlength=self.n_rows)

    def matrix(self, n_cols: int, weights: np.ndarray | None = None) -> sp.csr_matrix:
        """Rows x neighbours matrix holding the edge weights (1 if omitted)."""
        w = np.ones(len(self.nbr)) if weights is None else weights
        return sp.csr_matrix((w, self.nbr, self.indptr), shape=(self.n_rows, n_cols))

    def segment_softmax(self, scores: np.ndarray) -> np.ndarray:
        if len(scores) == 0:
            return scores.copy()
        starts = self.indptr[:-1]
        nonempty = self.indptr[1:] > starts
        mx = np.zeros(self.n_rows)
        mx[nonempty] = np.maximum.reduceat(scores, starts[nonempty])
        e = np.exp(scores - mx[self.owner])
        return e / self.segment_sum(e)[self.owner]

    def uniform(self) -> np.ndarray:
        deg = np.diff(self.indptr).astype(float)
        return 1.0 / deg[self.owner] if len(self.owner) else np.zeros(0)


def scatter_rows(index: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    """``out[index[k]] += vals[k]`` with a fixed summation order."""
    m = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(n, len(index)))
    return m @ vals


def segment_softmax(scores: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    """Softmax of ``scores`` within each CSR segment."""
    indptr = np.asarray(indptr, dtype=np.int64)
    owner = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    return _Edges(indptr, owner, owner).segment_softmax(np.asarray(scores, dtype=float))


@dataclass
class ForwardTrace:
    """Intermediates of one batch; ``users``/``items`` are the unique rows used."""

    users: np.ndarray
    items: np.ndarray
    m_u: np.ndarray
    m_iU: np.ndarray
    h_cS: np.ndarray | None
    h_cC: np.ndarray | None
    m_c: np.ndarray | None
    h_iC: np.ndarray
    h_iI: np.ndarray
    m_iS: np.ndarray
    m_i: np.ndarray
    alpha: np.ndarray | None  # per CC edge, aligned with graph.scene.cc.indices
    beta: np.ndarray          # per II edge of the batch items
    beta_indptr: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    def relu_inputs(self) -> list[np.ndarray]:
        """Every ReLU pre-activation touched by the batch."""
        c = self.cache
        return [v for k, v in c.items() if k.startswith("z_") and v is not None]


class SceneRec:
    """Batched scoring and gradients for one graph and one variant."""

    def __init__(self, graph: GraphBundle, variant: Variant | str = Variant.FULL):
        self.graph = graph
        self.variant = Variant(variant)
        sg = graph.scene
        self.item_cat = np.asarray(sg.item_cat)
        self._cc = _Edges.full(sg.cc)
        self._cs_mat = _Edges.full(sg.cat_scenes).matrix(sg.n_scenes)

    def check_params(self, params: ParameterSet) -> None:
        m = self.graph.maps
        want = (m.n_users, m.n_items, m.n_categories, m.n_scenes)
        if params.counts != want:
            raise ValueError(f"parameter entity counts {params.counts} do not match graph {want}")

    # -- forward -------------------------------------------------------------

    def _scene_sums(self, p: ParameterSet):
        """Per-category scene sums, their norms and unit directions."""
        h_s = self._cs_mat @ p.E_s
        norms = np.sqrt(np.sum(h_s * h_s, axis=1))
        safe = np.where(norms > 0, norms, 1.0)
        unit = np.where(norms[:, None] > 0, h_s / safe[:, None], 0.0)
        return h_s, norms, safe, unit

    @staticmethod
    def _cosines(unit: np.ndarray) -> np.ndarray:
        g = unit @ unit.T
        return 0.5 * (g + g.T)

    def _category_forward(self, p: ParameterSet, c: dict):
        """Scene sums, cosine matrix and representations of every category."""
        h_s, norms, safe, unit = self._scene_sums(p)
        cos = self._cosines(unit)
        cc = self._cc
        if self.variant.attentive:
            alpha = cc.segment_softmax(cos[cc.owner, cc.nbr])
        else:
            alpha = cc.uniform()
        h_c = cc.matrix(len(p.E_c), alpha) @ p.E_c
        x_c = np.concatenate([h_s, h_c], axis=1)
        z_c = x_c @ p.W_ic.T + p.b_ic
        c.update(norms=norms, safe=safe, unit=unit, cos=cos, alpha=alpha, x_c=x_c, z_c=z_c)
        return h_s, h_c, relu(z_c), cos, alpha

    def _embed(self, p: ParameterSet, users: np.ndarray, items: np.ndarray) -> ForwardTrace:
        g, v, c = self.graph, self.variant, {}
        d = p.d

        ue = _Edges.gather(g.bipartite.ui, users).matrix(len(p.E_i))
        s_u = ue @ p.E_i
        z_u = s_u @ p.W_u.T + p.b_u
        m_u = relu(z_u)

        ie = _Edges.gather(g.bipartite.iu, items).matrix(len(p.E_u))
        s_iu = ie @ p.E_u
        z_iu = s_iu @ p.W_iu.T + p.b_iu
        m_iU = relu(z_iu)

        cat = self.item_cat[items]
        ii = _Edges.gather(g.scene.ii, items)
        cos = h_s = h_cc = m_c = alpha = None
        if v.uses_scenes:
            h_s, h_cc, m_c, cos, alpha = self._category_forward(p, c)
            h_iC = m_c[cat]
        else:
            c["z_c"] = None
            h_iC = np.zeros((len(items), d))

        if v.uses_items:
            if v.attentive:
                if cos is None:
                    cos = self._cosines(self._scene_sums(p)[3])
                beta = ii.segment_softmax(cos[cat[ii.owner], self.item_cat[ii.nbr]])
            else:
                beta = ii.uniform()
            ii_mat = ii.matrix(len(p.E_i), beta)
            h_iI = ii_mat @ p.E_i
            c["ii_mat"] = ii_mat
        else:
            beta = np.zeros(0)
            h_iI = np.zeros((len(items), d))

        x_s = np.concatenate([h_iC, h_iI], axis=1)
        z_s = x_s @ p.W_ii.T + p.b_ii
        m_iS = relu(z_s)

        x_i = np.concatenate([m_iU, m_iS], axis=1)
        z_i1 = x_i @ p.W_i1.T + p.b_i1
        h_i1 = relu(z_i1)
        m_i = h_i1 @ p.W_i2.T + p.b_i2

        c.update(ue=ue, s_u=s_u, z_u=z_u, ie=ie, s_iu=s_iu, z_iu=z_iu, ii=ii, cat=cat,
                 x_s=x_s, z_s=z_s, x_i=x_i, z_i1=z_i1, h_i1=h_i1)
        beta_indptr = ii.indptr if v.uses_items else np.zeros(len(items) + 1, dtype=np.int64)
        return ForwardTrace(users, items, m_u, m_iU, h_s, h_cc, m_c, h_iC, h_iI, m_iS, m_i,
                            alpha, beta, beta_indptr, c)

    def forward_batch(self, params: ParameterSet, users, items) -> tuple[np.ndarray, ForwardTrace]:
        """Scores of the pairs ``(users[k], items[k])`` plus the trace for :meth:`backward`."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise ValueError("users and items must be 1-D arrays of equal length")
        uu, u_inv = np.unique(users, return_inverse=True)
        iu, i_inv = np.unique(items, return_inverse=True)
        tr = self._embed(params, uu, iu)
        x_r = np.concatenate([tr.m_u[u_inv], tr.m_i[i_inv]], axis=1)
        z_r = x_r @ params.W_r1.T + params.b_r1
        h_r = relu(z_r)
        scores = h_r @ params.W_r2[0] + params.b_r2[0]
        tr.cache.update(u_inv=u_inv, i_inv=i_inv, x_r=x_r, z_r=z_r, h_r=h_r)
        return scores, tr

    def embed_all(self, params: ParameterSet) -> tuple[np.ndarray, np.ndarray]:
        """Final user and item representations for the whole catalogue."""
        m = self.graph.maps
        tr = self._embed(params, np.arange(m.n_users), np.arange(m.n_items))
        return tr.m_u, tr.m_i

    @staticmethod
    def score_from_embeddings(params: ParameterSet, m_u: np.ndarray, m_i: np.ndarray) -> np.ndarray:
        """Scores of aligned rows ``m_u[k]``, ``m_i[k]``."""
        h = relu(np.concatenate([m_u, m_i], axis=-1) @ params.W_r1.T + params.b_r1)
        return h @ params.W_r2[0] + params.b_r2[0]

    # -- backward ------------------------------------------------------------

    def backward(self, params: ParameterSet, tr: ForwardTrace, d_scores: np.ndarray) -> ParameterSet:
        """Gradient of ``sum(d_scores * scores)`` w.r.t. every parameter."""
        p, c, v, d = params, tr.cache, self.variant, params.d
        gr = params.zeros_like()
        d_scores = np.asarray(d_scores, dtype=float)

        # scoring MLP
        gr.b_r2[0] = d_scores.sum()
        gr.W_r2[0] = d_scores @ c["h_r"]
        dz_r = np.outer(d_scores, p.W_r2[0]) * (c["z_r"] > 0)
        gr.W_r1 = dz_r.T @ c["x_r"]
        gr.b_r1 = dz_r.sum(axis=0)
        dx_r = dz_r @ p.W_r1
        dm_u = scatter_rows(c["u_inv"], dx_r[:, :d], len(tr.users))
        dm_i = scatter_rows(c["i_inv"], dx_r[:, d:], len(tr.items))

        # user aggregation
        dz_u = dm_u * (c["z_u"] > 0)
        gr.W_u = dz_u.T @ c["s_u"]
        gr.b_u = dz_u.sum(axis=0)
        e_i_grad = c["ue"].T @ (dz_u @ p.W_u)

        # item MLP
        gr.W_i2 = dm_i.T @ c["h_i1"]
        gr.b_i2 = dm_i.sum(axis=0)
        dz_i1 = (dm_i @ p.W_i2) * (c["z_i1"] > 0)
        gr.W_i1 = dz_i1.T @ c["x_i"]
        gr.b_i1 = dz_i1.sum(axis=0)
        dx_i = dz_i1 @ p.W_i1

        # item from its users
        dz_iu = dx_i[:, :d] * (c["z_iu"] > 0)
        gr.W_iu = dz_iu.T @ c["s_iu"]
        gr.b_iu = dz_iu.sum(axis=0)
        gr.E_u = c["ie"].T @ (dz_iu @ p.W_iu)

        # item in the scene space
        dz_s = dx_i[:, d:] * (c["z_s"] > 0)
        gr.W_ii = dz_s.T @ c["x_s"]
        gr.b_ii = dz_s.sum(axis=0)
        dx_s = dz_s @ p.W_ii
        dh_iC, dh_iI = dx_s[:, :d], dx_s[:, d:]

        n_cat = self.graph.maps.n_categories
        d_cos = np.zeros(n_cat * n_cat)
        cat = c["cat"]
        if v.uses_items:
            e_i_grad = e_i_grad + c["ii_mat"].T @ dh_iI
            if v.attentive:
                ii, beta = c["ii"], tr.beta
                d_beta = np.einsum("ij,ij->i", dh_iI[ii.owner], p.E_i[ii.nbr])
                d_star = beta * (d_beta - ii.segment_sum(beta * d_beta)[ii.owner])
                d_cos += np.bincount(cat[ii.owner] * n_cat + self.item_cat[ii.nbr],
                                     weights=d_star, minlength=n_cat * n_cat)
        gr.E_i = np.asarray(e_i_grad)

        if v.uses_scenes:
            dm_c = scatter_rows(cat, dh_iC, n_cat)
            dz_c = dm_c * (c["z_c"] > 0)
            gr.W_ic = dz_c.T @ c["x_c"]
            gr.b_ic = dz_c.sum(axis=0)
            dx_c = dz_c @ p.W_ic
            dh_s, dh_c = dx_c[:, :d].copy(), dx_c[:, d:]
            cc, alpha = self._cc, c["alpha"]
            gr.E_c = cc.matrix(n_cat, alpha).T @ dh_c
            if v.attentive:
                d_alpha = np.einsum("ij,ij->i", dh_c[cc.owner], p.E_c[cc.nbr])
                d_star = alpha * (d_alpha - cc.segment_sum(alpha * d_alpha)[cc.owner])
                d_cos += np.bincount(cc.owner * n_cat + cc.nbr, weights=d_star,
                                     minlength=n_cat * n_cat)
            unit, safe, norms = c["unit"], c["safe"], c["norms"]
        else:
            dh_s = None

        d_cos = d_cos.reshape(n_cat, n_cat)
        if v.attentive and (d_cos != 0).any():
            if dh_s is None:
                _, norms, safe, unit = self._scene_sums(p)
                dh_s = np.zeros((n_cat, d))
            d_unit = (d_cos + d_cos.T) @ unit
            radial = np.sum(d_unit * unit, axis=1)
            through = (d_unit - radial[:, None] * unit) / safe[:, None]
            dh_s += np.where(norms[:, None] > 0, through, 0.0)

        if dh_s is not None:
            gr.E_s = self._cs_mat.T @ dh_s
        return gr


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def softplus(x):
    """log(1 + exp(x)), stable for large |x|."""
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.logaddexp(0.0, -x))


def bpr_loss(pos_scores, neg_scores, params: ParameterSet | None = None, lam: float = 0.0) -> float:
    """Summed ``-ln sigmoid(pos - neg)`` plus ``lam * ||params||^2``."""
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if pos.shape != neg.shape or pos.size < 1:
        raise ValueError("score lists must have equal, nonzero length")
    loss = float(np.sum(softplus(-(pos - neg))))
    if lam and params is not None:
        loss += lam * params.sq_norm()
    return loss


def loss_and_gradients(model: SceneRec, params: ParameterSet, users, pos, neg,
                       lam: float) -> tuple[float, ParameterSet]:
    """BPR loss of a triple batch and its gradient w.r.t. every parameter."""
    users = np.asarray(users, dtype=np.int64)
    n = len(users)
    scores, tr = model.forward_batch(params, np.concatenate([users, users]),
                                     np.concatenate([np.asarray(pos), np.asarray(neg)]))
    diff = scores[:n] - scores[n:]
    loss = bpr_loss(scores[:n], scores[n:], params, lam)
    g = -sigmoid(-diff)  # d softplus(-z) / dz
    grads = model.backward(params, tr, np.concatenate([g, -g]))
    if lam:
        for name, arr in params.items():
            getattr(grads, name).__iadd__(2.0 * lam * arr)
    return loss, grads
