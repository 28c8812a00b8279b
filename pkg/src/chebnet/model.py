"""Two-branch ensemble model: graph convolution branch + 1-D conv branch.

The graph branch stacks (ChebConv | GCNConv | GATLayer) -> ReLU -> BatchNorm
blocks, applies one dropout after the last block, and ends in log-softmax:
for node tasks after a mean readout over nodes, for edge tasks after a
two-linear edge head over concatenated endpoint embeddings.  The conv branch
is two Conv1D + LeakyReLU(0.1) layers whose final kernel count equals the
class count, averaged over the remaining length.  Inference uses the graph
branch; the conv branch regularizes training through the ensemble loss.

A batch of C-channel samples enters the graph branch as diagonal node-signal
matrices (node i carries channel i's value), which makes the first layer's
feature width equal the node count.
"""

import math

import numpy as np

from chebnet.layers import (
    BatchNorm,
    ChebConv,
    Conv1D,
    GATLayer,
    GCNConv,
    Linear,
    dropout,
    dropout_backward,
    leaky_relu,
    leaky_relu_backward,
    log_softmax,
    log_softmax_backward,
    relu,
    relu_backward,
)

VARIANTS = ("cheb", "gcn", "gat")

CONV_SLOPE = 0.1
EDGE_HEAD_HIDDEN = 100


def diag_lift(features):
    """(B, C) samples -> (B, C, C) diagonal node-signal matrices."""
    feats = np.asarray(features, dtype=np.float64)
    b, c = feats.shape
    lifted = np.zeros((b, c, c))
    idx = np.arange(c)
    lifted[:, idx, idx] = feats
    return lifted


def edge_embed(node_embeddings, edges):
    """Per-edge features: concat(embedding[src], embedding[dst])."""
    emb = np.asarray(node_embeddings, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.int64)
    if edges.size and (edges.min() < 0 or edges.max() >= emb.shape[0]):
        raise ValueError("edge endpoint index out of range")
    return np.concatenate([emb[edges[:, 0]], emb[edges[:, 1]]], axis=1)


def conv_inputs_node(features, conv_shape):
    """Reshape (B, C) samples into (B, channels, length) conv sequences."""
    feats = np.asarray(features, dtype=np.float64)
    ch, length = conv_shape
    return feats.reshape(feats.shape[0], ch, length)


def conv_inputs_edge(node_features, edges, conv_shape):
    """Per-edge conv sequences: endpoint sequences concatenated along length."""
    feats = np.asarray(node_features, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.int64)
    ch, length = conv_shape
    shaped = feats.reshape(feats.shape[0], ch, length)
    return np.concatenate([shaped[edges[:, 0]], shaped[edges[:, 1]]], axis=2)


def _make_graph_layer(variant, f_in, f_out, order, rng):
    if variant == "cheb":
        return ChebConv(f_in, f_out, order=order, rng=rng)
    if variant == "gcn":
        return GCNConv(f_in, f_out, rng=rng)
    if variant == "gat":
        return GATLayer(f_in, f_out, rng=rng)
    raise ValueError(f"unknown variant {variant!r}")


class EnsembleModel:
    def __init__(self, task, variant, blocks, conv_layers, edge_head,
                 alpha, dropout_p, conv_shape, n_classes):
        self.task = task
        self.variant = variant
        self.blocks = blocks                # [(graph layer, batch norm), ...]
        self.conv_layers = conv_layers      # [Conv1D, Conv1D]
        self.edge_head = edge_head          # [Linear, Linear] or None
        self.alpha = alpha
        self.dropout_p = dropout_p
        self.conv_shape = tuple(conv_shape)
        self.n_classes = n_classes
        self._gcache = None
        self._ccache = None

    # -- parameter access ---------------------------------------------------

    def graph_parameters(self):
        params = []
        for layer, bn in self.blocks:
            params.extend(p for _, p in layer.parameters())
            params.extend(p for _, p in bn.parameters())
        if self.edge_head is not None:
            for lin in self.edge_head:
                params.extend(p for _, p in lin.parameters())
        return params

    def conv_parameters(self):
        params = []
        for conv in self.conv_layers:
            params.extend(p for _, p in conv.parameters())
        return params

    def parameters(self):
        return self.graph_parameters() + self.conv_parameters()

    def named_arrays(self):
        """(name, array) pairs covering parameters and batch-norm state, in
        the fixed manifest order used by the checkpoint archive."""
        out = []
        for i, (layer, bn) in enumerate(self.blocks):
            for name, p in layer.parameters():
                out.append((f"graph.{i}.layer.{name}", p.value))
            for name, p in bn.parameters():
                out.append((f"graph.{i}.bn.{name}", p.value))
            for name, arr in bn.state():
                out.append((f"graph.{i}.bn.{name}", arr))
        if self.edge_head is not None:
            for j, lin in enumerate(self.edge_head):
                for name, p in lin.parameters():
                    out.append((f"head.{j}.{name}", p.value))
        for j, conv in enumerate(self.conv_layers):
            for name, p in conv.parameters():
                out.append((f"conv.{j}.{name}", p.value))
        return out

    def set_training(self, training):
        for _, bn in self.blocks:
            bn.training = training

    # -- graph branch ---------------------------------------------------------

    def graph_forward(self, graph, features, edges=None, training=False,
                      rng=None):
        """Log-probabilities of the graph branch.

        Node tasks take (B, C) feature rows; edge tasks take the (N, F) node
        feature matrix plus the edge index array to score.
        """
        self.set_training(training)
        if self.task == "edge-class":
            if edges is None:
                raise ValueError("edge task needs an edge list")
            h = np.asarray(features, dtype=np.float64)
        else:
            h = diag_lift(features)
        x_in = h
        pre_acts = []
        for layer, bn in self.blocks:
            z = layer.forward(graph, h)
            a = relu(z)
            h = bn.forward(a)
            pre_acts.append(z)
        h, mask = dropout(h, self.dropout_p, rng=rng, training=training)
        cache = {"pre_acts": pre_acts, "mask": mask, "n_nodes": x_in.shape[-2]}
        if self.task == "edge-class":
            ee = edge_embed(h, edges)
            l1 = self.edge_head[0].forward(ee)
            a1 = relu(l1)
            l2 = self.edge_head[1].forward(a1)
            out = log_softmax(l2)
            cache.update(edges=np.asarray(edges, dtype=np.int64),
                         emb_shape=h.shape, l1=l1, out=out)
        else:
            pooled = h.mean(axis=-2)
            out = log_softmax(pooled)
            cache.update(out=out)
        self._gcache = cache
        return out

    def graph_backward(self, dout):
        c = self._gcache
        if c is None:
            raise RuntimeError("graph_backward before graph_forward")
        dlogits = log_softmax_backward(dout, c["out"])
        if self.task == "edge-class":
            da1 = self.edge_head[1].backward(dlogits)
            dl1 = relu_backward(da1, c["l1"])
            dee = self.edge_head[0].backward(dl1)
            d = dee.shape[1] // 2
            dh = np.zeros(c["emb_shape"])
            np.add.at(dh, c["edges"][:, 0], dee[:, :d])
            np.add.at(dh, c["edges"][:, 1], dee[:, d:])
        else:
            dpooled = dlogits / c["n_nodes"]
            dh = np.broadcast_to(
                dpooled[..., None, :],
                dpooled.shape[:-1] + (c["n_nodes"], dpooled.shape[-1])).copy()
        dh = dropout_backward(dh, c["mask"])
        for (layer, bn), z in zip(reversed(self.blocks),
                                  reversed(c["pre_acts"])):
            da = bn.backward(dh)
            dz = relu_backward(da, z)
            dh = layer.backward(dz)
        return dh

    # -- conv branch ----------------------------------------------------------

    def conv_forward(self, sequences):
        """Log-probabilities of the conv branch for (B, channels, length)."""
        z1 = self.conv_layers[0].forward(sequences)
        a1 = leaky_relu(z1, CONV_SLOPE)
        z2 = self.conv_layers[1].forward(a1)
        a2 = leaky_relu(z2, CONV_SLOPE)
        pooled = a2.mean(axis=-1)
        out = log_softmax(pooled)
        self._ccache = {"z1": z1, "z2": z2, "out": out,
                        "tail": z2.shape[-1]}
        return out

    def conv_backward(self, dout):
        c = self._ccache
        if c is None:
            raise RuntimeError("conv_backward before conv_forward")
        dpooled = log_softmax_backward(dout, c["out"])
        da2 = np.repeat(dpooled[..., None] / c["tail"], c["tail"], axis=-1)
        dz2 = leaky_relu_backward(da2, c["z2"], CONV_SLOPE)
        da1 = self.conv_layers[1].backward(dz2)
        dz1 = leaky_relu_backward(da1, c["z1"], CONV_SLOPE)
        return self.conv_layers[0].backward(dz1)

    # -- inference helpers ------------------------------------------------------

    def layer_activations(self, graph, features, edges=None):
        """Eval-mode per-node activations: input plus each graph block output.

        Node tasks average over the sample batch so every matrix has one row
        per graph node.
        """
        self.set_training(False)
        if self.task == "edge-class":
            h = np.asarray(features, dtype=np.float64)
        else:
            h = diag_lift(features)
        acts = [h.mean(axis=0) if h.ndim == 3 else h]
        for layer, bn in self.blocks:
            h = bn.forward(relu(layer.forward(graph, h)))
            acts.append(h.mean(axis=0) if h.ndim == 3 else h)
        return acts


def default_graph_dims(task, variant, width, n_classes, embedding_dim):
    """Per-layer output widths of the graph branch.

    Node tasks narrow toward the class count over four blocks (three for the
    gcn/gat baselines); edge tasks end at the embedding width fed to the
    edge head.
    """
    if task == "edge-class":
        return [EDGE_HEAD_HIDDEN, EDGE_HEAD_HIDDEN, embedding_dim]
    mid = max(math.ceil(width / 2), n_classes)
    if variant == "cheb":
        return [width, mid, n_classes, n_classes]
    return [width, mid, n_classes]


def build_model(task, variant, width, n_classes, conv_shape, rng,
                cheb_orders=(1, 1, 1, 1), graph_dims=None, conv_kernels=10,
                dropout_p=0.5, alpha=0.9, embedding_dim=50):
    """Assemble an EnsembleModel.

    ``width`` is the channel count for node tasks (= node count of the
    correlation graph) and the per-node feature width for edge tasks.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if graph_dims is None:
        graph_dims = default_graph_dims(task, variant, width, n_classes,
                                        embedding_dim)
    graph_dims = [int(d) for d in graph_dims]
    if not 3 <= len(graph_dims) <= 4:
        raise ValueError("graph branch depth must be 3 or 4")
    if task != "edge-class" and graph_dims[-1] != n_classes:
        raise ValueError("last graph dimension must equal the class count")
    orders = [int(k) for k in cheb_orders]
    if len(orders) < len(graph_dims):
        raise ValueError("need one Chebyshev order per graph layer")
    if any(k < 1 for k in orders):
        raise ValueError("Chebyshev orders must be >= 1")

    blocks = []
    f_in = width
    for i, f_out in enumerate(graph_dims):
        layer = _make_graph_layer(variant, f_in, f_out, orders[i], rng)
        blocks.append((layer, BatchNorm(f_out)))
        f_in = f_out

    ch, length = conv_shape
    seq_len = 2 * length if task == "edge-class" else length
    min_len = 2 * (Conv1D.KERNEL_LEN - 1) + 1
    if seq_len < min_len:
        raise ValueError(
            f"conv branch needs sequence length >= {min_len}, got {seq_len}")
    conv_layers = [Conv1D(ch, conv_kernels, rng=rng),
                   Conv1D(conv_kernels, n_classes, rng=rng)]

    edge_head = None
    if task == "edge-class":
        edge_head = [Linear(2 * graph_dims[-1], EDGE_HEAD_HIDDEN, rng=rng),
                     Linear(EDGE_HEAD_HIDDEN, n_classes, rng=rng)]

    return EnsembleModel(
        task=task,
        variant=variant,
        blocks=blocks,
        conv_layers=conv_layers,
        edge_head=edge_head,
        alpha=alpha,
        dropout_p=dropout_p,
        conv_shape=conv_shape,
        n_classes=n_classes,
    )
