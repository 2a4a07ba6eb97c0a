"""Full pipeline assembly: projection, fusion, transport, label attention.

A model owns every trainable parameter plus the wiring decisions implied by
the schema and the ablation switches.  Forward passes cache intermediates
per sample; the batch backward accumulates gradients in fixed sample order
so runs stay bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attention as att
from . import labelspace as ls
from . import transport as tp
from .config import TrainConfig
from .data import DatasetSchema
from .errors import ConfigurationError, DivergenceError, NumericalError
from .linalg import Matrix, Parameter, Rng


@dataclass(frozen=True)
class AblationSpec:
    """Component and modality switches; all-false is the full pipeline."""

    disable_capf: bool = False
    disable_othm: bool = False
    disable_lcdca: bool = False
    excluded_modalities: frozenset = frozenset()

    def label(self) -> str:
        parts = []
        if self.disable_capf:
            parts.append("wo_capf")
        if self.disable_othm:
            parts.append("wo_othm")
        if self.disable_lcdca:
            parts.append("wo_lcdca")
        parts.extend(f"wo_{m}" for m in sorted(self.excluded_modalities))
        return "+".join(parts) if parts else "full"


@dataclass
class SampleCache:
    proj: dict
    streams: list
    x_phy: Matrix
    x_v: Matrix | None
    plan: tp.TransportPlan | None
    transported: Matrix | None
    enc_phy_cache: object
    enc_v_cache: object
    x_m: Matrix
    pooled: Matrix | None
    lcdca_cache: object
    head_cache: object
    pred: np.ndarray


class Model:
    """The trainable pipeline for one schema/config/ablation combination."""

    def __init__(self, schema: DatasetSchema, config: TrainConfig,
                 ablation: AblationSpec | None = None):
        config.validate()
        self.schema = schema
        self.config = config
        self.ablation = ablation or AblationSpec()
        self._resolve_wiring()
        self._init_params(Rng(config.seed))

    # -- construction -------------------------------------------------------

    def _resolve_wiring(self) -> None:
        schema, ab = self.schema, self.ablation
        known = {m.name for m in schema.modalities}
        unknown = set(ab.excluded_modalities) - known
        if unknown:
            raise ConfigurationError(f"cannot exclude unknown modalities {sorted(unknown)}")
        if set(ab.excluded_modalities) >= known:
            raise ConfigurationError("cannot exclude every modality")
        active = [m for m in schema.modalities if m.name not in ab.excluded_modalities]
        phys = [m for m in active if m.group == "physiological"]
        behav = [m for m in active if m.group == "behavioral"]
        if not phys:
            raise ConfigurationError("at least one physiological modality is required")
        self.active_modalities = active
        self.behavioral = behav[0].name if behav else None
        c = self.config.tokens_per_modality
        self.use_capf = (not ab.disable_capf) and len(phys) >= 2
        if self.use_capf:
            # First remaining physiological modality supplies the queries.
            self.query_modality = phys[0].name
            self.kv_modalities = [m.name for m in phys[1:]]
            self.n_phy_tokens = c * len(self.kv_modalities)
        else:
            self.query_modality = None
            self.kv_modalities = [m.name for m in phys]
            self.n_phy_tokens = c * len(phys)
        self.physiological = [m.name for m in phys]
        self.use_othm = (not ab.disable_othm) and self.behavioral is not None
        self.n_v_tokens = self.n_phy_tokens if self.behavioral else 0
        self.n_fused = self.n_phy_tokens + self.n_v_tokens
        self.use_lcdca = not ab.disable_lcdca

    def _init_params(self, rng: Rng) -> None:
        cfg = self.config
        d = cfg.embed_dim
        c = cfg.tokens_per_modality
        self.projections: dict[str, att.ModalityProjection] = {}
        for m in self.active_modalities:
            tokens = self.n_v_tokens if m.name == self.behavioral else c
            self.projections[m.name] = att.init_projection(
                rng, m.name, m.dim, cfg.channels_for(m.name), tokens, d,
                prefix=f"proj.{m.name}",
            )
        self.capf = (
            att.init_cross_attention(rng, d, self.kv_modalities, cfg.heads, "capf")
            if self.use_capf
            else None
        )
        self.enc_phy = att.init_encoder(
            rng, d, cfg.ffn_dim, cfg.encoder_depth, cfg.heads, "enc_phy"
        )
        self.enc_v = (
            att.init_encoder(rng, d, cfg.ffn_dim, cfg.encoder_depth, cfg.heads, "enc_v")
            if self.behavioral
            else None
        )
        n_labels = self.schema.label_count
        if self.use_lcdca:
            self.w_pool = Parameter("pool.w", rng.glorot(n_labels, self.n_fused))
            self.label_attn = ls.init_label_attention(rng, n_labels, d, "label")
        else:
            self.w_pool = None
            self.label_attn = None
        self.head = ls.init_prediction_head(
            rng, d, cfg.head_hidden1, cfg.head_hidden2, n_labels, "head"
        )
        self.params: dict[str, Parameter] = {}
        for p in self._iter_params():
            if p.name in self.params:
                raise ConfigurationError(f"duplicate parameter name {p.name}")
            self.params[p.name] = p

    def _iter_params(self):
        for m in self.active_modalities:
            yield from att.iter_projection_params(self.projections[m.name])
        if self.capf is not None:
            yield from att.iter_cross_attention_params(self.capf)
        yield from att.iter_encoder_params(self.enc_phy)
        if self.enc_v is not None:
            yield from att.iter_encoder_params(self.enc_v)
        if self.use_lcdca:
            yield self.w_pool
            yield from ls.iter_label_attention_params(self.label_attn)
        yield from ls.iter_prediction_head_params(self.head)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- forward ------------------------------------------------------------

    def solve_plan(self, x_phy: Matrix, x_v: Matrix) -> tp.TransportPlan:
        cfg = self.config
        cost = tp.cost_matrix(x_phy, x_v)
        return tp.sinkhorn(
            cost,
            tp.uniform_marginal(x_phy.shape[0]),
            tp.uniform_marginal(x_v.shape[0]),
            cfg.sinkhorn_epsilon,
            cfg.sinkhorn_max_iter,
            cfg.sinkhorn_tol,
        )

    def _label_gram(self):
        if not self.use_lcdca:
            return None, None
        return ls.label_correlation_forward(self.label_attn.x_l.value)

    def forward_sample(
        self,
        features: dict[str, np.ndarray],
        m_learn: Matrix | None = None,
        plan: tp.TransportPlan | None = None,
    ) -> SampleCache:
        if self.use_lcdca and m_learn is None:
            m_learn, _ = self._label_gram()
        proj_caches = {}
        tokens = {}
        for m in self.active_modalities:
            tok, cache = att.project_modality_forward(
                features[m.name], self.projections[m.name]
            )
            tokens[m.name] = tok
            proj_caches[m.name] = cache
        streams = []
        if self.use_capf:
            q_tokens = tokens[self.query_modality]
            outs = []
            for kv in self.kv_modalities:
                out, cache = att.cross_attend_forward(
                    q_tokens, tokens[kv], kv, self.capf
                )
                outs.append(out)
                streams.append((kv, cache))
            x_phy = np.concatenate(outs, axis=0)
        else:
            x_phy = np.concatenate([tokens[m] for m in self.kv_modalities], axis=0)
        x_v = tokens[self.behavioral] if self.behavioral else None
        transported = None
        if self.behavioral:
            if self.use_othm:
                if plan is None:
                    plan = self.solve_plan(x_phy, x_v)
                transported = tp.transport_tokens(
                    x_phy, plan, rescale=self.config.rescale_transport
                )
            else:
                plan = None
                transported = x_phy
            e_phy, enc_phy_cache = att.transformer_encode_forward(
                transported, self.enc_phy
            )
            e_v, enc_v_cache = att.transformer_encode_forward(x_v, self.enc_v)
            x_m = np.concatenate([e_phy, e_v], axis=0)
        else:
            plan = None
            e_phy, enc_phy_cache = att.transformer_encode_forward(x_phy, self.enc_phy)
            enc_v_cache = None
            x_m = e_phy
        if self.use_lcdca:
            pooled = self.w_pool.value @ x_m
            x_o, lcdca_cache = ls.lcdca_forward(
                self.label_attn.x_l.value, pooled, m_learn, self.label_attn
            )
        else:
            pooled = None
            x_o, lcdca_cache = x_m, None
        pred, head_cache = ls.predict_head_forward(x_o, self.head)
        if not np.isfinite(pred).all():
            raise NumericalError("forward pass produced a non-finite prediction")
        return SampleCache(
            proj=proj_caches,
            streams=streams,
            x_phy=x_phy,
            x_v=x_v,
            plan=plan,
            transported=transported,
            enc_phy_cache=enc_phy_cache,
            enc_v_cache=enc_v_cache,
            x_m=x_m,
            pooled=pooled,
            lcdca_cache=lcdca_cache,
            head_cache=head_cache,
            pred=pred,
        )

    def predict(self, features: dict[str, np.ndarray]) -> np.ndarray:
        return self.forward_sample(features).pred

    def label_correlation(self) -> Matrix:
        if not self.use_lcdca:
            raise ConfigurationError("label attention is disabled in this model")
        return ls.correlation_matrix(self.label_attn.x_l.value)

    # -- loss and gradients --------------------------------------------------

    def batch_loss(
        self,
        samples,
        m_gt: Matrix | None = None,
        plans: list[tp.TransportPlan | None] | None = None,
        compute_grads: bool = True,
    ):
        """Mean divergence over the batch plus the correlation penalty.

        Returns (total, kld_mean, cc, caches).  When `compute_grads` is set,
        parameter gradients are zeroed and repopulated for exactly this batch;
        transport plans are constants throughout.
        """
        n = len(samples)
        if n == 0:
            raise ConfigurationError("batch must contain at least one sample")
        m_learn, gram_cache = self._label_gram()
        if self.use_lcdca and m_gt is None:
            m_gt = ls.batch_label_correlation(
                np.array([s.label for s in samples], dtype=np.float64)
            )
        caches = []
        kld_sum = 0.0
        for i, sample in enumerate(samples):
            plan = plans[i] if plans is not None else None
            cache = self.forward_sample(sample.features, m_learn=m_learn, plan=plan)
            caches.append(cache)
            kld_sum += ls.kld_loss(cache.pred, sample.label)
        kld_mean = kld_sum / n
        cc = ls.cc_loss(m_learn, m_gt) if self.use_lcdca else 0.0
        total = ls.overall_loss(kld_mean, cc, self.config.lambda_cc)
        if not np.isfinite(total):
            raise DivergenceError(f"non-finite loss {total!r}")
        if compute_grads:
            self.zero_grads()
            self._backward(samples, caches, m_learn, gram_cache, m_gt)
        return total, kld_mean, cc, caches

    def _backward(self, samples, caches, m_learn, gram_cache, m_gt) -> None:
        n = len(samples)
        d_m_learn = (
            np.zeros_like(m_learn) if self.use_lcdca else None
        )
        for sample, cache in zip(samples, caches):
            dpred = ls.kld_loss_backward(cache.pred, sample.label) / n
            d_x_o = ls.predict_head_backward(dpred, cache.head_cache, self.head)
            if self.use_lcdca:
                d_x_l, d_pooled, d_bias = ls.lcdca_backward(
                    d_x_o, cache.lcdca_cache, self.label_attn
                )
                self.label_attn.x_l.grad += d_x_l
                d_m_learn += d_bias
                self.w_pool.grad += d_pooled @ cache.x_m.T
                d_x_m = self.w_pool.value.T @ d_pooled
            else:
                d_x_m = d_x_o
            if self.behavioral:
                d_e_phy = d_x_m[: self.n_phy_tokens]
                d_e_v = d_x_m[self.n_phy_tokens :]
                d_x_v = att.transformer_encode_backward(
                    d_e_v, cache.enc_v_cache, self.enc_v
                )
                d_transported = att.transformer_encode_backward(
                    d_e_phy, cache.enc_phy_cache, self.enc_phy
                )
                if self.use_othm:
                    scale = (
                        float(cache.plan.t.shape[0])
                        if self.config.rescale_transport
                        else 1.0
                    )
                    d_x_phy = (scale * cache.plan.t).T @ d_transported
                else:
                    d_x_phy = d_transported
            else:
                d_x_v = None
                d_x_phy = att.transformer_encode_backward(
                    d_x_m, cache.enc_phy_cache, self.enc_phy
                )
            d_tokens = {m.name: None for m in self.active_modalities}
            if self.use_capf:
                c = self.config.tokens_per_modality
                d_query = np.zeros_like(d_x_phy[:c])
                for j, (kv, stream_cache) in enumerate(cache.streams):
                    dq, dkv = att.cross_attend_backward(
                        d_x_phy[j * c : (j + 1) * c], stream_cache, self.capf
                    )
                    d_query += dq
                    d_tokens[kv] = dkv
                d_tokens[self.query_modality] = d_query
            else:
                c = self.config.tokens_per_modality
                for j, name in enumerate(self.kv_modalities):
                    d_tokens[name] = d_x_phy[j * c : (j + 1) * c]
            if self.behavioral:
                d_tokens[self.behavioral] = d_x_v
            for m in self.active_modalities:
                if d_tokens[m.name] is not None:
                    att.project_modality_backward(
                        d_tokens[m.name], cache.proj[m.name], self.projections[m.name]
                    )
        if self.use_lcdca:
            d_m_learn += self.config.lambda_cc * ls.cc_loss_backward(m_learn, m_gt)
            self.label_attn.x_l.grad += ls.label_correlation_backward(
                d_m_learn, gram_cache
            )


def build_model(
    schema: DatasetSchema,
    config: TrainConfig,
    ablation: AblationSpec | None = None,
) -> Model:
    return Model(schema, config, ablation)


def build_ablated(
    schema: DatasetSchema, config: TrainConfig, ablation: AblationSpec
) -> Model:
    """A model with the requested components replaced or modalities dropped."""
    return Model(schema, config, ablation)


def ablation_grid(schema: DatasetSchema) -> list[AblationSpec]:
    """Every component removal plus every single-modality removal, plus full."""
    specs = [
        AblationSpec(),
        AblationSpec(disable_capf=True),
        AblationSpec(disable_othm=True),
        AblationSpec(disable_lcdca=True),
    ]
    specs.extend(
        AblationSpec(excluded_modalities=frozenset({m.name}))
        for m in schema.modalities
    )
    return specs
