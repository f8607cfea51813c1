use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FusionError;
use crate::geometry::BBox;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

pub(crate) fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Affine map `y = W x + b` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates `dy ⊗ x` into `grad` and returns `Wᵀ dy`.
    pub(crate) fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            grad.bias[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = o * self.in_dim;
            let grow = &mut grad.weight[row..row + self.in_dim];
            for (gw, v) in grow.iter_mut().zip(x) {
                *gw += g * v;
            }
            for (d, w) in dx.iter_mut().zip(&self.weight[row..row + self.in_dim]) {
                *d += g * w;
            }
        }
        dx
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Layer widths of a fusion network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub base_input_dim: usize,
    pub novel_input_dim: usize,
    /// Per-branch hidden width.
    pub d_h: usize,
    /// Trunk width.
    pub d_t: usize,
    /// Object classes, `|B| + |N|`. The class head has one more output for
    /// background.
    pub num_classes: usize,
}

impl NetShape {
    pub fn num_outputs(&self) -> usize {
        self.num_classes + 1
    }

    pub fn background_id(&self) -> usize {
        self.num_classes
    }
}

/// One input branch: a linear projection followed by two affine+SeLU layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub proj: Dense,
    pub selu1: Dense,
    pub selu2: Dense,
}

impl Branch {
    fn init(in_dim: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        Self {
            proj: Dense::glorot(in_dim, d_h, rng),
            selu1: Dense::glorot(d_h, d_h, rng),
            selu2: Dense::glorot(d_h, d_h, rng),
        }
    }

    fn zeros(in_dim: usize, d_h: usize) -> Self {
        Self {
            proj: Dense::zeros(in_dim, d_h),
            selu1: Dense::zeros(d_h, d_h),
            selu2: Dense::zeros(d_h, d_h),
        }
    }
}

/// Weights of the fusion network. Gradients use the same structure.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionNetParams {
    pub shape: NetShape,
    pub base: Branch,
    pub novel: Branch,
    pub trunk1: Dense,
    pub trunk2: Dense,
    pub class_head: Dense,
    pub box_head: Dense,
}

pub const LAYER_NAMES: [&str; 10] = [
    "base.proj",
    "base.selu1",
    "base.selu2",
    "novel.proj",
    "novel.selu1",
    "novel.selu2",
    "trunk.relu1",
    "trunk.relu2",
    "head.class",
    "head.box",
];

impl FusionNetParams {
    /// Seeded Glorot-uniform initialization.
    pub fn init(shape: NetShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Branch::init(shape.base_input_dim, shape.d_h, &mut rng);
        let novel = Branch::init(shape.novel_input_dim, shape.d_h, &mut rng);
        Self {
            shape,
            base,
            novel,
            trunk1: Dense::glorot(2 * shape.d_h, shape.d_t, &mut rng),
            trunk2: Dense::glorot(shape.d_t, shape.d_t, &mut rng),
            class_head: Dense::glorot(shape.d_t, shape.num_outputs(), &mut rng),
            box_head: Dense::glorot(shape.d_t, 4, &mut rng),
        }
    }

    pub fn zeros(shape: NetShape) -> Self {
        Self {
            shape,
            base: Branch::zeros(shape.base_input_dim, shape.d_h),
            novel: Branch::zeros(shape.novel_input_dim, shape.d_h),
            trunk1: Dense::zeros(2 * shape.d_h, shape.d_t),
            trunk2: Dense::zeros(shape.d_t, shape.d_t),
            class_head: Dense::zeros(shape.d_t, shape.num_outputs()),
            box_head: Dense::zeros(shape.d_t, 4),
        }
    }

    /// Layers in [`LAYER_NAMES`] order.
    pub fn layers(&self) -> [&Dense; 10] {
        [
            &self.base.proj,
            &self.base.selu1,
            &self.base.selu2,
            &self.novel.proj,
            &self.novel.selu1,
            &self.novel.selu2,
            &self.trunk1,
            &self.trunk2,
            &self.class_head,
            &self.box_head,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 10] {
        [
            &mut self.base.proj,
            &mut self.base.selu1,
            &mut self.base.selu2,
            &mut self.novel.proj,
            &mut self.novel.selu1,
            &mut self.novel.selu2,
            &mut self.trunk1,
            &mut self.trunk2,
            &mut self.class_head,
            &mut self.box_head,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    /// Every parameter, layer by layer, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers().into_iter().flat_map(|l| l.values())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers_mut().into_iter().flat_map(|l| l.values_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Checks that layer dimensions agree with `shape`.
    pub fn check(&self) -> Result<(), FusionError> {
        let s = self.shape;
        let expected = [
            (s.base_input_dim, s.d_h),
            (s.d_h, s.d_h),
            (s.d_h, s.d_h),
            (s.novel_input_dim, s.d_h),
            (s.d_h, s.d_h),
            (s.d_h, s.d_h),
            (2 * s.d_h, s.d_t),
            (s.d_t, s.d_t),
            (s.d_t, s.num_outputs()),
            (s.d_t, 4),
        ];
        for ((layer, name), (i, o)) in self.layers().iter().zip(LAYER_NAMES).zip(expected) {
            if layer.in_dim != i
                || layer.out_dim != o
                || layer.weight.len() != i * o
                || layer.bias.len() != o
            {
                return Err(FusionError::DimensionMismatch {
                    layer: name.to_string(),
                    expected: i * o + o,
                    got: layer.weight.len() + layer.bias.len(),
                });
            }
        }
        Ok(())
    }
}

/// Fusion network input for one overlapping region.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    /// Base detector feature, logits and normalized predicted box.
    pub base_branch: Vec<f64>,
    /// Novel detector feature, logits and normalized predicted box.
    pub novel_branch: Vec<f64>,
    /// The proposal region being classified; box deltas are relative to it.
    pub proposal_box: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// Pre-softmax scores, background last.
    pub class_scores: Vec<f64>,
    pub box_delta: [f64; 4],
}

#[derive(Debug, Clone)]
pub(crate) struct BranchCache {
    pub x: Vec<f64>,
    pub h0: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    pub base: BranchCache,
    pub novel: BranchCache,
    pub concat: Vec<f64>,
    pub zt1: Vec<f64>,
    pub t1: Vec<f64>,
    pub zt2: Vec<f64>,
    pub t2: Vec<f64>,
    pub output: FusionOutput,
}

fn branch_forward(b: &Branch, x: &[f64]) -> BranchCache {
    let h0 = b.proj.forward(x);
    let z1 = b.selu1.forward(&h0);
    let a1: Vec<f64> = z1.iter().map(|&v| selu(v)).collect();
    let z2 = b.selu2.forward(&a1);
    let a2: Vec<f64> = z2.iter().map(|&v| selu(v)).collect();
    BranchCache {
        x: x.to_vec(),
        h0,
        z1,
        a1,
        z2,
        a2,
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

pub(crate) fn forward_cached(
    params: &FusionNetParams,
    input: &FusionInput,
) -> Result<ForwardCache, FusionError> {
    let s = params.shape;
    if input.base_branch.len() != s.base_input_dim {
        return Err(FusionError::DimensionMismatch {
            layer: "base.proj".into(),
            expected: s.base_input_dim,
            got: input.base_branch.len(),
        });
    }
    if input.novel_branch.len() != s.novel_input_dim {
        return Err(FusionError::DimensionMismatch {
            layer: "novel.proj".into(),
            expected: s.novel_input_dim,
            got: input.novel_branch.len(),
        });
    }
    let base = branch_forward(&params.base, &input.base_branch);
    let novel = branch_forward(&params.novel, &input.novel_branch);
    let concat: Vec<f64> = base.a2.iter().chain(&novel.a2).copied().collect();
    let zt1 = params.trunk1.forward(&concat);
    let t1 = relu(&zt1);
    let zt2 = params.trunk2.forward(&t1);
    let t2 = relu(&zt2);
    let class_scores = params.class_head.forward(&t2);
    let d = params.box_head.forward(&t2);
    Ok(ForwardCache {
        base,
        novel,
        concat,
        zt1,
        t1,
        zt2,
        t2,
        output: FusionOutput {
            class_scores,
            box_delta: [d[0], d[1], d[2], d[3]],
        },
    })
}

pub fn forward(params: &FusionNetParams, input: &FusionInput) -> Result<FusionOutput, FusionError> {
    forward_cached(params, input).map(|c| c.output)
}

fn branch_backward(b: &Branch, cache: &BranchCache, da2: &[f64], grad: &mut Branch) {
    let dz2: Vec<f64> = da2
        .iter()
        .zip(&cache.z2)
        .map(|(g, &z)| g * selu_grad(z))
        .collect();
    let da1 = b.selu2.backward(&cache.a1, &dz2, &mut grad.selu2);
    let dz1: Vec<f64> = da1
        .iter()
        .zip(&cache.z1)
        .map(|(g, &z)| g * selu_grad(z))
        .collect();
    let dh0 = b.selu1.backward(&cache.h0, &dz1, &mut grad.selu1);
    b.proj.backward(&cache.x, &dh0, &mut grad.proj);
}

/// Accumulates parameter gradients for one example into `grad`, given the
/// loss gradients with respect to the two network outputs.
pub(crate) fn backward(
    params: &FusionNetParams,
    cache: &ForwardCache,
    d_scores: &[f64],
    d_delta: &[f64; 4],
    grad: &mut FusionNetParams,
) {
    let mut dt2 = params
        .class_head
        .backward(&cache.t2, d_scores, &mut grad.class_head);
    let from_box = params
        .box_head
        .backward(&cache.t2, d_delta, &mut grad.box_head);
    for (a, b) in dt2.iter_mut().zip(from_box) {
        *a += b;
    }
    let dzt2: Vec<f64> = dt2
        .iter()
        .zip(&cache.zt2)
        .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
        .collect();
    let dt1 = params.trunk2.backward(&cache.t1, &dzt2, &mut grad.trunk2);
    let dzt1: Vec<f64> = dt1
        .iter()
        .zip(&cache.zt1)
        .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
        .collect();
    let dconcat = params
        .trunk1
        .backward(&cache.concat, &dzt1, &mut grad.trunk1);
    let (d_base, d_novel) = dconcat.split_at(params.shape.d_h);
    branch_backward(&params.base, &cache.base, d_base, &mut grad.base);
    branch_backward(&params.novel, &cache.novel, d_novel, &mut grad.novel);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_shape() -> NetShape {
        NetShape {
            base_input_dim: 1,
            novel_input_dim: 1,
            d_h: 1,
            d_t: 1,
            num_classes: 1,
        }
    }

    fn input(b: f64, n: f64) -> FusionInput {
        FusionInput {
            base_branch: vec![b],
            novel_branch: vec![n],
            proposal_box: BBox::new_unchecked(0., 0., 1., 1.),
        }
    }

    #[test]
    fn selu_values() {
        assert_eq!(selu(0.0), 0.0);
        assert_eq!(selu(1.0), 1.050_700_987_355_480_5);
        let expected = SELU_LAMBDA * SELU_ALPHA * ((-1.0f64).exp() - 1.0);
        assert!((selu(-1.0) - expected).abs() < 1e-15);
        assert!((selu(-1.0) + 1.1113).abs() < 1e-4);
        assert!((selu(1e-13) - selu(-1e-13)).abs() < 1e-12);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let shape = NetShape {
            base_input_dim: 3,
            novel_input_dim: 2,
            d_h: 4,
            d_t: 5,
            num_classes: 3,
        };
        let p = FusionNetParams::zeros(shape);
        let x = FusionInput {
            base_branch: vec![1., -2., 3.],
            novel_branch: vec![0.5, 7.],
            proposal_box: BBox::new_unchecked(0., 0., 4., 4.),
        };
        let out = forward(&p, &x).unwrap();
        assert_eq!(out.class_scores, vec![0.0; 4]);
        assert_eq!(out.box_delta, [0.0; 4]);
    }

    #[test]
    fn hand_computed_scalar_network() {
        let mut p = FusionNetParams::zeros(tiny_shape());
        // base: proj w=2 b=0.5, selu1 w=1, selu2 w=1; novel: proj w=-1.
        p.base.proj.weight[0] = 2.0;
        p.base.proj.bias[0] = 0.5;
        p.base.selu1.weight[0] = 1.0;
        p.base.selu2.weight[0] = 1.0;
        p.novel.proj.weight[0] = -1.0;
        p.novel.selu1.weight[0] = 1.0;
        p.novel.selu2.weight[0] = 1.0;
        p.trunk1.weight.copy_from_slice(&[1.0, 1.0]);
        p.trunk2.weight[0] = 3.0;
        p.class_head.weight.copy_from_slice(&[1.0, -1.0]);
        p.class_head.bias.copy_from_slice(&[0.0, 0.25]);
        p.box_head.weight.copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);

        let out = forward(&p, &input(1.0, 1.0)).unwrap();
        // base: h0 = 2.5 -> selu(selu(2.5)) = λ²·2.5; novel: h0 = -1 -> selu(selu(-1)).
        let b = SELU_LAMBDA * SELU_LAMBDA * 2.5;
        let n = selu(selu(-1.0));
        let t1 = (b + n).max(0.0);
        let t2 = (3.0 * t1).max(0.0);
        assert!((out.class_scores[0] - t2).abs() < 1e-12);
        assert!((out.class_scores[1] - (-t2 + 0.25)).abs() < 1e-12);
        for (k, w) in [0.1, 0.2, 0.3, 0.4].iter().enumerate() {
            assert!((out.box_delta[k] - w * t2).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_reduces_to_bias_composition() {
        let shape = NetShape {
            base_input_dim: 3,
            novel_input_dim: 2,
            d_h: 2,
            d_t: 3,
            num_classes: 2,
        };
        let mut p = FusionNetParams::init(shape, 7);
        for (k, layer) in p.layers_mut().into_iter().enumerate() {
            for (j, b) in layer.bias.iter_mut().enumerate() {
                *b = 0.1 * (k as f64) - 0.05 * (j as f64);
            }
        }
        let x = FusionInput {
            base_branch: vec![0.0; 3],
            novel_branch: vec![0.0; 2],
            proposal_box: BBox::new_unchecked(0., 0., 1., 1.),
        };
        let out = forward(&p, &x).unwrap();

        // Independent evaluation: with zero input the projections emit their biases.
        let lin = |l: &Dense, v: &[f64]| -> Vec<f64> {
            (0..l.out_dim)
                .map(|o| {
                    l.bias[o]
                        + (0..l.in_dim)
                            .map(|i| l.weight[o * l.in_dim + i] * v[i])
                            .sum::<f64>()
                })
                .collect()
        };
        let br = |b: &Branch| {
            let h = b.proj.bias.clone();
            let a1: Vec<f64> = lin(&b.selu1, &h).into_iter().map(selu).collect();
            lin(&b.selu2, &a1).into_iter().map(selu).collect::<Vec<_>>()
        };
        let mut c = br(&p.base);
        c.extend(br(&p.novel));
        let t1: Vec<f64> = lin(&p.trunk1, &c).into_iter().map(|v| v.max(0.0)).collect();
        let t2: Vec<f64> = lin(&p.trunk2, &t1)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        assert_eq!(out.class_scores, lin(&p.class_head, &t2));
        assert_eq!(out.box_delta.to_vec(), lin(&p.box_head, &t2));
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let p = FusionNetParams::zeros(tiny_shape());
        let mut x = input(1.0, 1.0);
        x.novel_branch.push(0.0);
        match forward(&p, &x) {
            Err(FusionError::DimensionMismatch {
                layer,
                expected,
                got,
            }) => {
                assert_eq!((layer.as_str(), expected, got), ("novel.proj", 1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let shape = NetShape {
            base_input_dim: 6,
            novel_input_dim: 5,
            d_h: 8,
            d_t: 16,
            num_classes: 4,
        };
        let a = FusionNetParams::init(shape, 3);
        assert_eq!(a, FusionNetParams::init(shape, 3));
        assert_ne!(a, FusionNetParams::init(shape, 4));
        a.check().unwrap();
        let limit = (6.0f64 / 14.0).sqrt();
        assert!(a.base.proj.weight.iter().all(|w| w.abs() <= limit));
        assert!(a.class_head.bias.iter().all(|&b| b == 0.0));
    }
}
