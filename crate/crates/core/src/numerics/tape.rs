//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Every forward op appends one node holding its output value. `backward`
//! walks the nodes in reverse, propagating adjoints to inputs and finally
//! accumulating them into the owning [`ParamStore`].

use crate::error::{shape_err, Error, Result};
use crate::numerics::conv::{self, ConvGeometry};
use crate::numerics::real::{axpy, dot};
use crate::numerics::{ParamId, ParamStore, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Real> {
    Input,
    Param(ParamId),
    Conv2d {
        input: Var,
        weight: Var,
        geometry: ConvGeometry,
    },
    ChannelBias {
        input: Var,
        bias: Var,
    },
    ChannelScale {
        input: Var,
        scale: Var,
    },
    GroupNorm {
        input: Var,
        groups: usize,
        normalized: Tensor<T>,
        inv_std: Vec<T>,
    },
    Relu {
        input: Var,
    },
    StripPool {
        input: Var,
        parts: usize,
    },
    GlobalAvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Slice {
        input: Var,
        start: usize,
    },
    SelectPart {
        input: Var,
        part: usize,
    },
    MeanParts {
        input: Var,
    },
    GatherRows {
        input: Var,
        rows: Vec<usize>,
    },
    GroupMean {
        input: Var,
        groups: Vec<usize>,
        counts: Vec<usize>,
    },
    PairwiseDistance {
        a: Var,
        b: Var,
    },
    RowPick {
        input: Var,
        picks: Vec<usize>,
    },
    RowSquaredNorm {
        input: Var,
    },
    L2NormalizeRows {
        input: Var,
        norms: Vec<T>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    AddScalar {
        input: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Ordered record of a forward computation.
#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
    visit_order: Vec<usize>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            visit_order: Vec::new(),
        }
    }

    /// Clears all recorded operations so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.visit_order.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Adjoint of `v` after [`Tape::backward`], if any flowed to it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Node indices in the order the last backward pass visited them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let (is, ws) = (self.shape(input), self.shape(weight));
        if is.len() != 4 || ws.len() != 4 {
            return shape_err(
                "conv2d",
                format!("expected input [B,C,H,W] and weight [K,C,kh,kw], got {is:?} and {ws:?}"),
            );
        }
        if is[1] != ws[1] {
            return shape_err(
                "conv2d",
                format!("input has {} channels but weight expects {}", is[1], ws[1]),
            );
        }
        if stride == 0 {
            return shape_err("conv2d", "stride must be at least 1");
        }
        let (h, w, kh, kw) = (is[2], is[3], ws[2], ws[3]);
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * padding, w + 2 * padding),
            );
        }
        let geometry = ConvGeometry {
            batch: is[0],
            in_channels: is[1],
            height: h,
            width: w,
            out_channels: ws[0],
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let out = conv::forward(&geometry, self.value(input), self.value(weight));
        Ok(self.push(out, Op::Conv2d { input, weight, geometry }))
    }

    /// Adds a per-channel bias to a `[B,C,H,W]` tensor.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (is, bs) = (self.shape(input), self.shape(bias));
        if is.len() != 4 || bs != [is[1]] {
            return shape_err("channel_bias", format!("input {is:?}, bias {bs:?}"));
        }
        let plane = is[2] * is[3];
        let channels = is[1];
        let mut out = self.value(input).clone();
        let b = self.value(bias).data().to_vec();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bv = b[i % channels];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
        Ok(self.push(out, Op::ChannelBias { input, bias }))
    }

    /// Multiplies each channel of a `[B,C,H,W]` tensor by `scale[c]`.
    pub fn channel_scale(&mut self, input: Var, scale: Var) -> Result<Var> {
        let (is, ss) = (self.shape(input), self.shape(scale));
        if is.len() != 4 || ss != [is[1]] {
            return shape_err("channel_scale", format!("input {is:?}, scale {ss:?}"));
        }
        let plane = is[2] * is[3];
        let channels = is[1];
        let mut out = self.value(input).clone();
        let a = self.value(scale).data().to_vec();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let av = a[i % channels];
            chunk.iter_mut().for_each(|v| *v = *v * av);
        }
        Ok(self.push(out, Op::ChannelScale { input, scale }))
    }

    /// Per-sample group normalisation of `[B,C,H,W]` without affine terms.
    ///
    /// Channels are split into `groups` contiguous groups; each (sample, group)
    /// block is shifted to zero mean and scaled by `1/sqrt(var + eps)` using
    /// the biased variance. Statistics never mix samples, so a row's output
    /// does not depend on the rest of the batch.
    pub fn group_norm(&mut self, input: Var, groups: usize, eps: f64) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || groups == 0 || s[1] % groups != 0 {
            return shape_err("group_norm", format!("input {s:?}, groups {groups}"));
        }
        let block = s[1] / groups * s[2] * s[3];
        let n = T::lit(block as f64);
        let eps = T::lit(eps);
        let mut out = self.value(input).clone();
        let mut inv_std = Vec::with_capacity(s[0] * groups);
        for chunk in out.data_mut().chunks_mut(block) {
            let mean = chunk.iter().copied().sum::<T>() / n;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            chunk.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        let normalized = out.clone();
        Ok(self.push(out, Op::GroupNorm { input, groups, normalized, inv_std }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu { input })
    }

    /// Averages `[B,C,H,W]` over `parts` horizontal strips, giving `[B,parts,C]`.
    pub fn strip_pool(&mut self, input: Var, parts: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return shape_err("strip_pool", format!("expected [B,C,H,W], got {s:?}"));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        if parts == 0 || h % parts != 0 {
            return Err(Error::Config(format!(
                "feature height H={h} is not divisible into parts={parts} strips"
            )));
        }
        let rows = h / parts;
        let inv = T::one() / T::lit((rows * w) as f64);
        let x = self.value(input).data();
        let mut out = Tensor::zeros(&[b, parts, c]);
        let o = out.data_mut();
        for bi in 0..b {
            for ci in 0..c {
                let plane = &x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                for p in 0..parts {
                    let s: T = plane[p * rows * w..(p + 1) * rows * w].iter().copied().sum();
                    o[(bi * parts + p) * c + ci] = s * inv;
                }
            }
        }
        Ok(self.push(out, Op::StripPool { input, parts }))
    }

    /// Mean over spatial positions: `[B,C,H,W]` to `[B,C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return shape_err("global_avg_pool", format!("expected [B,C,H,W], got {s:?}"));
        }
        let plane = s[2] * s[3];
        let inv = T::one() / T::lit(plane as f64);
        let data: Vec<T> = self
            .value(input)
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![s[0], s[1]], data)?;
        Ok(self.push(out, Op::GlobalAvgPool { input }))
    }

    /// `input [B,D] · weight [D,K] + bias [K]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (is, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if is.len() != 2 || ws.len() != 2 || is[1] != ws[0] || bs != [ws[1]] {
            return shape_err(
                "linear",
                format!("input {is:?}, weight {ws:?}, bias {bs:?}"),
            );
        }
        let (b, d, k) = (is[0], is[1], ws[1]);
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let bias_v = self.value(bias).data();
        let mut out = Tensor::zeros(&[b, k]);
        let o = out.data_mut();
        for bi in 0..b {
            let row = &mut o[bi * k..(bi + 1) * k];
            row.copy_from_slice(bias_v);
            for di in 0..d {
                axpy(x[bi * d + di], &w[di * k..(di + 1) * k], row);
            }
        }
        Ok(self.push(out, Op::Linear { input, weight, bias }))
    }

    /// Concatenates along the leading (batch) axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_leading(&parts)?;
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec() }))
    }

    /// Rows `[start, start + count)` of the leading axis.
    pub fn slice(&mut self, input: Var, start: usize, count: usize) -> Result<Var> {
        let out = self.value(input).slice_leading(start, count)?;
        Ok(self.push(out, Op::Slice { input, start }))
    }

    /// Picks part `part` from `[B,N,C]`, giving `[B,C]`.
    pub fn select_part(&mut self, input: Var, part: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 || part >= s[1] {
            return shape_err("select_part", format!("part {part} of {s:?}"));
        }
        let (b, n, c) = (s[0], s[1], s[2]);
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(b * c);
        for bi in 0..b {
            data.extend_from_slice(&x[(bi * n + part) * c..(bi * n + part + 1) * c]);
        }
        let out = Tensor::new(vec![b, c], data)?;
        Ok(self.push(out, Op::SelectPart { input, part }))
    }

    /// Averages `[B,N,C]` over its parts, giving `[B,C]`.
    pub fn mean_parts(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 {
            return shape_err("mean_parts", format!("expected [B,N,C], got {s:?}"));
        }
        let (b, n, c) = (s[0], s[1], s[2]);
        let inv = T::one() / T::lit(n as f64);
        let x = self.value(input).data();
        let mut out = Tensor::zeros(&[b, c]);
        for bi in 0..b {
            let row = &mut out.data_mut()[bi * c..(bi + 1) * c];
            for p in 0..n {
                axpy(inv, &x[(bi * n + p) * c..(bi * n + p + 1) * c], row);
            }
        }
        Ok(self.push(out, Op::MeanParts { input }))
    }

    /// Gathers rows of a `[R,D]` tensor.
    pub fn gather_rows(&mut self, input: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 || rows.is_empty() || rows.iter().any(|&r| r >= s[0]) {
            return shape_err("gather_rows", format!("rows {rows:?} of {s:?}"));
        }
        let d = s[1];
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(&x[r * d..(r + 1) * d]);
        }
        let out = Tensor::new(vec![rows.len(), d], data)?;
        Ok(self.push(out, Op::GatherRows { input, rows: rows.to_vec() }))
    }

    /// Mean of the rows of `[R,D]` sharing a group index, giving `[G,D]`.
    /// Every group in `0..num_groups` must own at least one row.
    pub fn group_mean(&mut self, input: Var, groups: &[usize], num_groups: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 || groups.len() != s[0] {
            return shape_err("group_mean", format!("{} group labels for {s:?}", groups.len()));
        }
        let d = s[1];
        let mut counts = vec![0usize; num_groups];
        for &g in groups {
            if g >= num_groups {
                return shape_err("group_mean", format!("group {g} >= {num_groups}"));
            }
            counts[g] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Batch(format!("group {empty} has no members")));
        }
        let x = self.value(input).data();
        let mut out = Tensor::zeros(&[num_groups, d]);
        for (r, &g) in groups.iter().enumerate() {
            let inv = T::one() / T::lit(counts[g] as f64);
            axpy(inv, &x[r * d..(r + 1) * d], &mut out.data_mut()[g * d..(g + 1) * d]);
        }
        Ok(self.push(
            out,
            Op::GroupMean {
                input,
                groups: groups.to_vec(),
                counts,
            },
        ))
    }

    /// Euclidean distances between rows: `a [G,D]`, `b [R,D]` to `[G,R]`.
    pub fn pairwise_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return shape_err("pairwise_distance", format!("{sa:?} vs {sb:?}"));
        }
        let (g, r, d) = (sa[0], sb[0], sa[1]);
        let xa = self.value(a).data();
        let xb = self.value(b).data();
        let mut out = Tensor::zeros(&[g, r]);
        for gi in 0..g {
            let ra = &xa[gi * d..(gi + 1) * d];
            for ri in 0..r {
                let rb = &xb[ri * d..(ri + 1) * d];
                let sq: T = ra
                    .iter()
                    .zip(rb)
                    .map(|(&p, &q)| (p - q) * (p - q))
                    .sum();
                out.data_mut()[gi * r + ri] = sq.sqrt();
            }
        }
        Ok(self.push(out, Op::PairwiseDistance { a, b }))
    }

    /// Row-wise maximum of `[G,R]` over entries where `mask[g*R + r]` holds.
    /// Ties resolve to the first column.
    pub fn masked_row_max(&mut self, input: Var, mask: &[bool]) -> Result<Var> {
        self.masked_row_pick(input, mask, "masked_row_max", |cand, best| cand > best)
    }

    /// Row-wise minimum counterpart of [`Tape::masked_row_max`].
    pub fn masked_row_min(&mut self, input: Var, mask: &[bool]) -> Result<Var> {
        self.masked_row_pick(input, mask, "masked_row_min", |cand, best| cand < best)
    }

    fn masked_row_pick(
        &mut self,
        input: Var,
        mask: &[bool],
        op: &'static str,
        better: impl Fn(T, T) -> bool,
    ) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 || mask.len() != s[0] * s[1] {
            return shape_err(op, format!("mask of {} for {s:?}", mask.len()));
        }
        let (g, r) = (s[0], s[1]);
        let x = self.value(input).data();
        let mut picks = Vec::with_capacity(g);
        let mut data = Vec::with_capacity(g);
        for gi in 0..g {
            let mut best: Option<usize> = None;
            for ri in 0..r {
                if !mask[gi * r + ri] {
                    continue;
                }
                let idx = gi * r + ri;
                match best {
                    Some(b) if !better(x[idx], x[b]) => {}
                    _ => best = Some(idx),
                }
            }
            let Some(b) = best else {
                return Err(Error::Batch(format!("{op}: row {gi} has no eligible entries")));
            };
            picks.push(b);
            data.push(x[b]);
        }
        let out = Tensor::new(vec![g], data)?;
        Ok(self.push(out, Op::RowPick { input, picks }))
    }

    /// Squared L2 norm of each row: `[G,D]` to `[G]`.
    pub fn row_squared_norm(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 {
            return shape_err("row_squared_norm", format!("expected [G,D], got {s:?}"));
        }
        let data: Vec<T> = self
            .value(input)
            .data()
            .chunks(s[1])
            .map(|row| dot(row, row))
            .collect();
        let out = Tensor::new(vec![s[0]], data)?;
        Ok(self.push(out, Op::RowSquaredNorm { input }))
    }

    /// Scales each row of `[R,D]` to unit L2 norm (rows of norm below
    /// `1e-12` are divided by `1e-12`).
    pub fn l2_normalize_rows(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 {
            return shape_err("l2_normalize_rows", format!("expected [R,D], got {s:?}"));
        }
        let floor = T::lit(1e-12);
        let mut out = self.value(input).clone();
        let mut norms = Vec::with_capacity(s[0]);
        for row in out.data_mut().chunks_mut(s[1]) {
            let n = dot(row, row).sqrt().max(floor);
            row.iter_mut().for_each(|v| *v = *v / n);
            norms.push(n);
        }
        Ok(self.push(out, Op::L2NormalizeRows { input, norms }))
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let vb = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().zip(vb).for_each(|(x, y)| *x = *x - y);
        Ok(self.push(out, Op::Sub { a, b }))
    }

    pub fn add_scalar(&mut self, input: Var, c: T) -> Var {
        let out = self.value(input).map(|v| v + c);
        self.push(out, Op::AddScalar { input })
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let out = self.value(input).map(|v| v * factor);
        self.push(out, Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::Sum { input })
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let out = Tensor::scalar(t.sum() / T::lit(t.len() as f64));
        self.push(out, Op::Mean { input })
    }

    /// Sum of several scalars.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = terms.split_first() else {
            return shape_err("add_all", "no terms");
        };
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || labels.len() != s[0] {
            return shape_err(
                "cross_entropy",
                format!("{} labels for logits {s:?}", labels.len()),
            );
        }
        let (b, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label: bad, classes: c });
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); b * c];
        let mut total = T::zero();
        for bi in 0..b {
            let row = &x[bi * c..(bi + 1) * c];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let log_z = z.ln() + m;
            for ci in 0..c {
                probs[bi * c + ci] = (row[ci] - log_z).exp();
            }
            total = total + (log_z - row[labels[bi]]);
        }
        let out = Tensor::scalar(total / T::lit(b as f64));
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Propagates d(output)/d(.) back through the tape and adds parameter
    /// adjoints into `store`. The tape must be [`reset`](Tape::reset) before
    /// another backward pass.
    pub fn backward(&mut self, output: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("backward called twice without reset".into()));
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::Tape(format!("output node {} not on this tape", output.0)));
        }
        if !self.value(output).is_scalar() {
            return Err(Error::Tape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[output.0] = Some(Tensor::full(self.value(output).shape(), T::one()));
        self.visit_order.clear();

        for idx in (0..=output.0).rev() {
            let Some(g) = self.grads[idx].clone() else {
                continue;
            };
            self.visit_order.push(idx);
            self.backward_node(idx, &g, store)?;
        }
        Ok(())
    }

    fn backward_node(&mut self, idx: usize, g: &Tensor<T>, store: &mut ParamStore<T>) -> Result<()> {
        // Borrow-split: take the op out while its inputs receive adjoints.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Input);
        match &op {
            Op::Input => {}
            Op::Param(id) => {
                let p = store.get_mut(*id);
                if p.grad.shape() != g.shape() {
                    self.nodes[idx].op = op;
                    return Err(Error::Tape("parameter shape changed since recording".into()));
                }
                p.grad.add_assign(g);
            }
            Op::Conv2d { input, weight, geometry } => {
                let (di, dw) = conv::backward(geometry, self.value(*input), self.value(*weight), g);
                self.accumulate(*input, di);
                self.accumulate(*weight, dw);
            }
            Op::ChannelBias { input, bias } => {
                let s = g.shape();
                let (channels, plane) = (s[1], s[2] * s[3]);
                let mut db = Tensor::zeros(&[channels]);
                for (i, chunk) in g.data().chunks(plane).enumerate() {
                    let c = i % channels;
                    db.data_mut()[c] = db.data()[c] + chunk.iter().copied().sum::<T>();
                }
                self.accumulate(*input, g.clone());
                self.accumulate(*bias, db);
            }
            Op::ChannelScale { input, scale } => {
                let s = g.shape();
                let (channels, plane) = (s[1], s[2] * s[3]);
                let x = self.value(*input);
                let a = self.value(*scale).data().to_vec();
                let mut da = Tensor::zeros(&[channels]);
                let mut dx = g.clone();
                for (i, (chunk, xc)) in dx.data_mut().chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
                    let c = i % channels;
                    da.data_mut()[c] = da.data()[c] + dot(chunk, xc);
                    chunk.iter_mut().for_each(|v| *v = *v * a[c]);
                }
                self.accumulate(*input, dx);
                self.accumulate(*scale, da);
            }
            Op::GroupNorm { input, groups, normalized, inv_std } => {
                let s = g.shape();
                let block = s[1] / groups * s[2] * s[3];
                let n = T::lit(block as f64);
                let mut d = g.clone();
                for ((dc, xh), &inv) in d
                    .data_mut()
                    .chunks_mut(block)
                    .zip(normalized.data().chunks(block))
                    .zip(inv_std)
                {
                    let mean_g = dc.iter().copied().sum::<T>() / n;
                    let mean_gx = dot(dc, xh) / n;
                    dc.iter_mut()
                        .zip(xh)
                        .for_each(|(v, &h)| *v = (*v - mean_g - h * mean_gx) * inv);
                }
                self.accumulate(*input, d);
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                let mut d = g.clone();
                d.data_mut()
                    .iter_mut()
                    .zip(x.data())
                    .for_each(|(gv, &xv)| {
                        if xv <= T::zero() {
                            *gv = T::zero();
                        }
                    });
                self.accumulate(*input, d);
            }
            Op::StripPool { input, parts } => {
                let s = self.shape(*input).to_vec();
                let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                let rows = h / parts;
                let inv = T::one() / T::lit((rows * w) as f64);
                let mut d = Tensor::zeros(&s);
                for bi in 0..b {
                    for ci in 0..c {
                        let plane = &mut d.data_mut()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for p in 0..*parts {
                            let gv = g.data()[(bi * parts + p) * c + ci] * inv;
                            plane[p * rows * w..(p + 1) * rows * w]
                                .iter_mut()
                                .for_each(|v| *v = gv);
                        }
                    }
                }
                self.accumulate(*input, d);
            }
            Op::GlobalAvgPool { input } => {
                let s = self.shape(*input).to_vec();
                let plane = s[2] * s[3];
                let inv = T::one() / T::lit(plane as f64);
                let mut d = Tensor::zeros(&s);
                for (chunk, &gv) in d.data_mut().chunks_mut(plane).zip(g.data()) {
                    chunk.iter_mut().for_each(|v| *v = gv * inv);
                }
                self.accumulate(*input, d);
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (b, d, k) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                let mut dx = Tensor::zeros(x.shape());
                let mut dw = Tensor::zeros(w.shape());
                let mut db = Tensor::zeros(&[k]);
                for bi in 0..b {
                    let grow = &g.data()[bi * k..(bi + 1) * k];
                    for di in 0..d {
                        dx.data_mut()[bi * d + di] = dot(grow, &w.data()[di * k..(di + 1) * k]);
                        axpy(x.data()[bi * d + di], grow, &mut dw.data_mut()[di * k..(di + 1) * k]);
                    }
                    axpy(T::one(), grow, db.data_mut());
                }
                self.accumulate(*input, dx);
                self.accumulate(*weight, dw);
                self.accumulate(*bias, db);
            }
            Op::Concat { inputs } => {
                let mut start = 0;
                for &v in inputs {
                    let n = self.shape(v)[0];
                    let part = g.slice_leading(start, n)?;
                    self.accumulate(v, part);
                    start += n;
                }
            }
            Op::Slice { input, start } => {
                let s = self.shape(*input).to_vec();
                let stride = g.len() / g.shape()[0];
                let mut d = Tensor::zeros(&s);
                d.data_mut()[start * stride..start * stride + g.len()].copy_from_slice(g.data());
                self.accumulate(*input, d);
            }
            Op::SelectPart { input, part } => {
                let s = self.shape(*input).to_vec();
                let (b, n, c) = (s[0], s[1], s[2]);
                let mut d = Tensor::zeros(&s);
                for bi in 0..b {
                    d.data_mut()[(bi * n + part) * c..(bi * n + part + 1) * c]
                        .copy_from_slice(&g.data()[bi * c..(bi + 1) * c]);
                }
                self.accumulate(*input, d);
            }
            Op::MeanParts { input } => {
                let s = self.shape(*input).to_vec();
                let (b, n, c) = (s[0], s[1], s[2]);
                let inv = T::one() / T::lit(n as f64);
                let mut d = Tensor::zeros(&s);
                for bi in 0..b {
                    for p in 0..n {
                        let dst = &mut d.data_mut()[(bi * n + p) * c..(bi * n + p + 1) * c];
                        axpy(inv, &g.data()[bi * c..(bi + 1) * c], dst);
                    }
                }
                self.accumulate(*input, d);
            }
            Op::GatherRows { input, rows } => {
                let s = self.shape(*input).to_vec();
                let dcols = s[1];
                let mut d = Tensor::zeros(&s);
                for (i, &r) in rows.iter().enumerate() {
                    axpy(
                        T::one(),
                        &g.data()[i * dcols..(i + 1) * dcols],
                        &mut d.data_mut()[r * dcols..(r + 1) * dcols],
                    );
                }
                self.accumulate(*input, d);
            }
            Op::GroupMean { input, groups, counts } => {
                let s = self.shape(*input).to_vec();
                let dcols = s[1];
                let mut d = Tensor::zeros(&s);
                for (r, &grp) in groups.iter().enumerate() {
                    let inv = T::one() / T::lit(counts[grp] as f64);
                    axpy(
                        inv,
                        &g.data()[grp * dcols..(grp + 1) * dcols],
                        &mut d.data_mut()[r * dcols..(r + 1) * dcols],
                    );
                }
                self.accumulate(*input, d);
            }
            Op::PairwiseDistance { a, b } => {
                let (xa, xb) = (self.value(*a), self.value(*b));
                let (gn, rn, dn) = (xa.shape()[0], xb.shape()[0], xa.shape()[1]);
                let dist = self.nodes[idx].value.data();
                let mut da = Tensor::zeros(xa.shape());
                let mut db = Tensor::zeros(xb.shape());
                for gi in 0..gn {
                    for ri in 0..rn {
                        let dv = dist[gi * rn + ri];
                        let up = g.data()[gi * rn + ri];
                        // Zero distance: take the zero subgradient.
                        if dv <= T::zero() || up == T::zero() {
                            continue;
                        }
                        let coef = up / dv;
                        for k in 0..dn {
                            let diff = xa.data()[gi * dn + k] - xb.data()[ri * dn + k];
                            da.data_mut()[gi * dn + k] = da.data()[gi * dn + k] + coef * diff;
                            db.data_mut()[ri * dn + k] = db.data()[ri * dn + k] - coef * diff;
                        }
                    }
                }
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::RowPick { input, picks } => {
                let mut d = Tensor::zeros(self.shape(*input));
                for (gi, &p) in picks.iter().enumerate() {
                    d.data_mut()[p] = d.data()[p] + g.data()[gi];
                }
                self.accumulate(*input, d);
            }
            Op::RowSquaredNorm { input } => {
                let x = self.value(*input);
                let dcols = x.shape()[1];
                let mut d = x.clone();
                for (row, &gv) in d.data_mut().chunks_mut(dcols).zip(g.data()) {
                    row.iter_mut().for_each(|v| *v = T::lit(2.0) * gv * *v);
                }
                self.accumulate(*input, d);
            }
            Op::L2NormalizeRows { input, norms } => {
                let y = &self.nodes[idx].value;
                let dcols = y.shape()[1];
                let mut d = Tensor::zeros(y.shape());
                for (r, &n) in norms.iter().enumerate() {
                    let yr = &y.data()[r * dcols..(r + 1) * dcols];
                    let gr = &g.data()[r * dcols..(r + 1) * dcols];
                    let proj = dot(yr, gr);
                    for k in 0..dcols {
                        d.data_mut()[r * dcols + k] = (gr[k] - yr[k] * proj) / n;
                    }
                }
                self.accumulate(*input, d);
            }
            Op::Add { a, b } => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.map(|v| -v));
            }
            Op::AddScalar { input } => self.accumulate(*input, g.clone()),
            Op::Scale { input, factor } => {
                let f = *factor;
                self.accumulate(*input, g.map(|v| v * f));
            }
            Op::Sum { input } => {
                let d = Tensor::full(self.shape(*input), g.item());
                self.accumulate(*input, d);
            }
            Op::Mean { input } => {
                let s = self.shape(*input).to_vec();
                let n: usize = s.iter().product();
                let d = Tensor::full(&s, g.item() / T::lit(n as f64));
                self.accumulate(*input, d);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let s = self.shape(*logits).to_vec();
                let (b, c) = (s[0], s[1]);
                let scale = g.item() / T::lit(b as f64);
                let mut d = Tensor::new(s, probs.clone())?;
                for (bi, &l) in labels.iter().enumerate() {
                    d.data_mut()[bi * c + l] = d.data()[bi * c + l] - T::one();
                }
                d.data_mut().iter_mut().for_each(|v| *v = *v * scale);
                self.accumulate(*logits, d);
            }
        }
        self.nodes[idx].op = op;
        Ok(())
    }
}
