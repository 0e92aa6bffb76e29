use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DenseLayer;
use crate::numkernel::{xavier_init, Matrix, Seed};

/// Default cap on generated item-embedding bytes per user (64 MiB).
pub const DEFAULT_MEMORY_BUDGET: u64 = 64 * 1024 * 1024;

/// Which parts of the per-user model are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Item embeddings and MLP are both generated per user.
    #[default]
    Full,
    /// Item embeddings are one trainable matrix shared by every user.
    Si,
    /// MLP layers are trainable and shared by every user.
    Sm,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "si" => Ok(Variant::Si),
            "sm" => Ok(Variant::Sm),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}, expected full, si or sm"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Si => "si",
            Variant::Sm => "sm",
        })
    }
}

/// Sizes of every server- and device-side tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// `m`
    pub num_users: usize,
    /// `n`
    pub num_items: usize,
    /// `d_u`
    pub user_dim: usize,
    /// `d_i`
    pub item_dim: usize,
    /// `k`, width of memory rows and collaborative vectors
    pub memory_dim: usize,
    /// `s`, width of the low-rank item factor
    pub low_rank: usize,
    /// `o`, hidden size of every generator
    pub hidden: usize,
    /// Output width of each MLP layer; the last must be 1.
    pub layer_sizes: Vec<usize>,
}

impl ModelDims {
    /// Default sizes (d_u = d_i = 32, k = 128, s = 8, o = 512, layers [8, 1]).
    pub fn with_defaults(num_users: usize, num_items: usize) -> Self {
        Self {
            num_users,
            num_items,
            user_dim: 32,
            item_dim: 32,
            memory_dim: 128,
            low_rank: 8,
            hidden: 512,
            layer_sizes: vec![8, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("user_dim", self.user_dim),
            ("item_dim", self.item_dim),
            ("memory_dim", self.memory_dim),
            ("low_rank", self.low_rank),
            ("hidden", self.hidden),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::Dimension(format!("{name} must be at least 1")));
            }
        }
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(Error::Dimension(format!(
                "layer sizes must be non-empty and positive, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.last() != Some(&1) {
            return Err(Error::Dimension(format!(
                "last layer must have size 1, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    /// `(f_out, f_in)` per MLP layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut f_in = self.item_dim;
        self.layer_sizes
            .iter()
            .map(|&f_out| {
                let shape = (f_out, f_in);
                f_in = f_out;
                shape
            })
            .collect()
    }

    /// Elements the item generator emits per user: `s·n + d_i·s`.
    pub fn rg_output_len(&self) -> usize {
        self.low_rank * self.num_items + self.item_dim * self.low_rank
    }

    /// Elements a direct generator of `I_u` would emit: `d_i·n`.
    pub fn direct_output_len(&self) -> usize {
        self.item_dim * self.num_items
    }

    /// Parameters of the per-user MLP.
    pub fn mlp_param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(o, i)| o * i + o)
            .sum()
    }

    /// Total generated parameters per user, item embeddings included.
    pub fn phi_param_count(&self) -> usize {
        self.direct_output_len() + self.mlp_param_count()
    }

    /// Bytes of generated item-side tensors per user (factors plus the product).
    pub fn generated_item_bytes(&self) -> u64 {
        ((self.rg_output_len() + self.direct_output_len()) * std::mem::size_of::<f64>()) as u64
    }

    /// Names and shapes of every tensor in the meta parameters, in canonical order.
    pub fn theta_shapes(&self, variant: Variant) -> Vec<(String, (usize, usize))> {
        let (du, di, k, s, o, n) = (
            self.user_dim,
            self.item_dim,
            self.memory_dim,
            self.low_rank,
            self.hidden,
            self.num_items,
        );
        let mut out = vec![
            ("user_embeddings".to_string(), (du, self.num_users)),
            ("memory".to_string(), (du, k)),
        ];
        match variant {
            Variant::Si => out.push(("items.shared".into(), (di, n))),
            _ => {
                out.push(("items.w_left".into(), (o, k)));
                out.push(("items.b_left".into(), (o, 1)));
                out.push(("items.u_left".into(), (s * n, o)));
                out.push(("items.w_right".into(), (o, k)));
                out.push(("items.b_right".into(), (o, 1)));
                out.push(("items.u_right".into(), (di * s, o)));
            }
        }
        for (l, (f_out, f_in)) in self.layer_shapes().into_iter().enumerate() {
            match variant {
                Variant::Sm => {
                    out.push((format!("layer{l}.weights"), (f_out, f_in)));
                    out.push((format!("layer{l}.bias"), (f_out, 1)));
                }
                _ => {
                    out.push((format!("layer{l}.w_hidden"), (o, k)));
                    out.push((format!("layer{l}.b_hidden"), (o, 1)));
                    out.push((format!("layer{l}.u_weight"), (f_out * f_in, o)));
                    out.push((format!("layer{l}.b_weight"), (f_out * f_in, 1)));
                    out.push((format!("layer{l}.u_bias"), (f_out, o)));
                    out.push((format!("layer{l}.b_bias"), (f_out, 1)));
                }
            }
        }
        out
    }
}

/// Weights that generate a user's item embeddings through two low-rank factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemGenerator {
    pub w_left: Matrix,
    pub b_left: Matrix,
    pub u_left: Matrix,
    pub w_right: Matrix,
    pub b_right: Matrix,
    pub u_right: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ItemParams {
    Generated(ItemGenerator),
    Shared(Matrix),
}

/// Weights that generate one MLP layer. Never shared between layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGenerator {
    pub w_hidden: Matrix,
    pub b_hidden: Matrix,
    pub u_weight: Matrix,
    pub b_weight: Matrix,
    pub u_bias: Matrix,
    pub b_bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    Generated(Vec<LayerGenerator>),
    Shared(Vec<DenseLayer>),
}

/// All trainable server-side parameters.
///
/// The same structure is reused for gradients; see [`MetaParams::zeros_like`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaParams {
    pub dims: ModelDims,
    pub variant: Variant,
    pub memory_budget: u64,
    pub user_embeddings: Matrix,
    pub memory: Matrix,
    pub items: ItemParams,
    pub layers: LayerParams,
}

impl MetaParams {
    /// Xavier-uniform initialization of every tensor, one derived seed per tensor.
    pub fn init(dims: &ModelDims, variant: Variant, memory_budget: u64, seed: Seed) -> Result<Self> {
        dims.validate()?;
        if variant != Variant::Si {
            let needed = dims.generated_item_bytes();
            if needed > memory_budget {
                return Err(Error::Capacity {
                    needed,
                    budget: memory_budget,
                });
            }
        }
        let mut tensors = Vec::new();
        for (i, (_, (r, c))) in dims.theta_shapes(variant).into_iter().enumerate() {
            tensors.push(xavier_init(r, c, seed.derive(i as u64))?);
        }
        Self::from_tensors(dims.clone(), variant, memory_budget, tensors)
    }

    /// Rebuilds parameters from tensors in canonical order, checking every shape.
    pub fn from_tensors(
        dims: ModelDims,
        variant: Variant,
        memory_budget: u64,
        tensors: Vec<Matrix>,
    ) -> Result<Self> {
        dims.validate()?;
        let shapes = dims.theta_shapes(variant);
        if shapes.len() != tensors.len() {
            return Err(Error::Dimension(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != *shape {
                return Err(Error::Dimension(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked above");
        let user_embeddings = next();
        let memory = next();
        let items = match variant {
            Variant::Si => ItemParams::Shared(next()),
            _ => ItemParams::Generated(ItemGenerator {
                w_left: next(),
                b_left: next(),
                u_left: next(),
                w_right: next(),
                b_right: next(),
                u_right: next(),
            }),
        };
        let n_layers = dims.layer_sizes.len();
        let layers = match variant {
            Variant::Sm => LayerParams::Shared(
                (0..n_layers)
                    .map(|_| DenseLayer {
                        weights: next(),
                        bias: next(),
                    })
                    .collect(),
            ),
            _ => LayerParams::Generated(
                (0..n_layers)
                    .map(|_| LayerGenerator {
                        w_hidden: next(),
                        b_hidden: next(),
                        u_weight: next(),
                        b_weight: next(),
                        u_bias: next(),
                        b_bias: next(),
                    })
                    .collect(),
            ),
        };
        Ok(Self {
            dims,
            variant,
            memory_budget,
            user_embeddings,
            memory,
            items,
            layers,
        })
    }

    /// Rejects generated item embeddings larger than `memory_budget` bytes per user.
    pub fn check_capacity(&self) -> Result<()> {
        if self.variant == Variant::Si {
            return Ok(());
        }
        let needed = self.dims.generated_item_bytes();
        if needed > self.memory_budget {
            return Err(Error::Capacity {
                needed,
                budget: self.memory_budget,
            });
        }
        Ok(())
    }

    /// Every tensor in canonical order (matches [`ModelDims::theta_shapes`]).
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.user_embeddings, &self.memory];
        match &self.items {
            ItemParams::Shared(m) => out.push(m),
            ItemParams::Generated(g) => {
                out.extend([&g.w_left, &g.b_left, &g.u_left, &g.w_right, &g.b_right, &g.u_right])
            }
        }
        match &self.layers {
            LayerParams::Shared(ls) => {
                for l in ls {
                    out.extend([&l.weights, &l.bias]);
                }
            }
            LayerParams::Generated(gs) => {
                for g in gs {
                    out.extend([
                        &g.w_hidden,
                        &g.b_hidden,
                        &g.u_weight,
                        &g.b_weight,
                        &g.u_bias,
                        &g.b_bias,
                    ]);
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.user_embeddings, &mut self.memory];
        match &mut self.items {
            ItemParams::Shared(m) => out.push(m),
            ItemParams::Generated(g) => out.extend([
                &mut g.w_left,
                &mut g.b_left,
                &mut g.u_left,
                &mut g.w_right,
                &mut g.b_right,
                &mut g.u_right,
            ]),
        }
        match &mut self.layers {
            LayerParams::Shared(ls) => {
                for l in ls {
                    out.extend([&mut l.weights, &mut l.bias]);
                }
            }
            LayerParams::Generated(gs) => {
                for g in gs {
                    out.extend([
                        &mut g.w_hidden,
                        &mut g.b_hidden,
                        &mut g.u_weight,
                        &mut g.b_weight,
                        &mut g.u_bias,
                        &mut g.b_bias,
                    ]);
                }
            }
        }
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        self.dims
            .theta_shapes(self.variant)
            .into_iter()
            .map(|(name, _)| name)
            .zip(self.tensors())
            .collect()
    }

    /// Same structure with every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelDims {
        ModelDims {
            num_users: 2,
            num_items: 3,
            user_dim: 2,
            item_dim: 2,
            memory_dim: 2,
            low_rank: 1,
            hidden: 2,
            layer_sizes: vec![2, 1],
        }
    }

    #[test]
    fn shape_audit_for_every_variant() {
        for variant in [Variant::Full, Variant::Si, Variant::Sm] {
            let dims = ModelDims {
                num_users: 5,
                num_items: 7,
                user_dim: 3,
                item_dim: 4,
                memory_dim: 6,
                low_rank: 2,
                hidden: 9,
                layer_sizes: vec![5, 3, 1],
            };
            let theta = MetaParams::init(&dims, variant, DEFAULT_MEMORY_BUDGET, Seed(1)).unwrap();
            let expected: Vec<_> = dims.theta_shapes(variant).into_iter().map(|p| p.1).collect();
            assert_eq!(theta.shapes(), expected);
        }
    }

    #[test]
    fn generated_shapes_follow_dims() {
        let dims = tiny();
        let shapes = dims.theta_shapes(Variant::Full);
        let get = |n: &str| shapes.iter().find(|p| p.0 == n).unwrap().1;
        assert_eq!(get("user_embeddings"), (2, 2));
        assert_eq!(get("memory"), (2, 2));
        assert_eq!(get("items.u_left"), (3, 2));
        assert_eq!(get("items.u_right"), (2, 2));
        assert_eq!(get("layer0.u_weight"), (4, 2));
        assert_eq!(get("layer1.u_weight"), (2, 2));
        assert_eq!(get("layer1.u_bias"), (1, 2));
    }

    #[test]
    fn default_mlp_count() {
        let dims = ModelDims::with_defaults(10, 100);
        assert_eq!(dims.mlp_param_count(), 8 * 32 + 8 + 8 + 1);
        assert_eq!(dims.mlp_param_count(), 273);
        assert_eq!(dims.phi_param_count(), 273 + 32 * 100);
    }

    #[test]
    fn rise_dimensional_output_is_smaller() {
        let dims = ModelDims {
            low_rank: 8,
            item_dim: 32,
            ..ModelDims::with_defaults(1, 100)
        };
        assert_eq!(dims.rg_output_len(), 1056);
        assert_eq!(dims.direct_output_len(), 3200);
    }

    #[test]
    fn init_is_deterministic() {
        let a = MetaParams::init(&tiny(), Variant::Full, DEFAULT_MEMORY_BUDGET, Seed(3)).unwrap();
        let b = MetaParams::init(&tiny(), Variant::Full, DEFAULT_MEMORY_BUDGET, Seed(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn capacity_guard_rejects_huge_item_sets() {
        let dims = ModelDims::with_defaults(1, 1_000_000);
        let err = MetaParams::init(&dims, Variant::Full, 1024, Seed(0)).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn invalid_dims_rejected() {
        let mut d = tiny();
        d.num_users = 0;
        assert!(d.validate().is_err());
        let mut d = tiny();
        d.layer_sizes = vec![2, 2];
        assert!(d.validate().is_err());
    }
}
