//! Exact per-layer parameter counts and forward-pass FLOP estimates.
//!
//! Counting convention (documented in every report): one multiply-accumulate
//! is 2 FLOPs for convolutions, linear layers, outer products, and the
//! attention application; pooling, softmax, sigmoid, ReLU, and elementwise
//! adds cost 1 FLOP per element; batchnorm costs 2 FLOPs per element (folded
//! scale and shift); topology fusion costs 3 FLOPs per map entry; dropout
//! costs nothing. FLOP totals are one forward pass at batch size 1; batchnorm
//! running statistics are tracked separately from the learnable total.

use serde::Serialize;

use crate::attention::PoolingVariant;
use crate::error::Result;
use crate::model::{ModelConfig, ModelParams};
use crate::scalar::Scalar;

pub const FLOP_CONVENTION: &str = "1 MAC = 2 FLOPs (conv/linear/outer/attention-apply); \
pooling/softmax/sigmoid/relu/add = 1 FLOP per element; batchnorm = 2 per element; \
topology fusion = 3 per map entry; dropout = 0; totals are per forward pass at N=1";

/// One accounted layer.
#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub name: String,
    /// Learnable parameter count.
    pub params: u64,
    /// Non-learnable state (batchnorm running statistics).
    pub state_params: u64,
    /// FLOPs for one forward pass at batch size 1 and the report's frame count.
    pub flops: u64,
}

/// Per-layer and total costs for a configuration.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_state_params: u64,
    pub total_flops: u64,
    /// Frame count the FLOP column was evaluated at; 0 for params-only reports.
    pub frames: usize,
    pub joints: usize,
    pub flop_convention: String,
    /// Rows whose cost scales with the square of the joint count.
    pub v_squared_rows: Vec<String>,
    pub config: ModelConfig,
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table: one layer per row with its share of the total.
    pub fn to_table(&self) -> String {
        let share_base = if self.total_flops > 0 {
            self.total_flops
        } else {
            self.total_params
        } as f64;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:>12} {:>10} {:>14} {:>8}\n",
            "layer", "params", "state", "flops", "share"
        ));
        for row in &self.rows {
            let share = if share_base > 0.0 {
                100.0
                    * (if self.total_flops > 0 {
                        row.flops
                    } else {
                        row.params
                    }) as f64
                    / share_base
            } else {
                0.0
            };
            out.push_str(&format!(
                "{:<28} {:>12} {:>10} {:>14} {:>7.2}%\n",
                row.name, row.params, row.state_params, row.flops, share
            ));
        }
        out.push_str(&format!(
            "{:<28} {:>12} {:>10} {:>14} {:>7.2}%\n",
            "TOTAL", self.total_params, self.total_state_params, self.total_flops, 100.0
        ));
        out.push_str(&format!(
            "frames={} joints={} convention: {}\n",
            self.frames, self.joints, self.flop_convention
        ));
        out
    }
}

/// Closed-form learnable parameter counts per layer. FLOP columns are zero.
pub fn count_params(config: &ModelConfig) -> Result<CostReport> {
    build_report(config, None)
}

/// Closed-form parameter and FLOP counts for one forward pass of `frames`
/// frames at batch size 1; the joint count comes from the config's graph.
pub fn count_flops(config: &ModelConfig, frames: usize) -> Result<CostReport> {
    build_report(config, Some(frames))
}

/// Walk every learnable tensor of an instantiated model and sum element
/// counts. This is the oracle `count_params` is checked against.
pub fn brute_force_param_enumeration<S: Scalar>(params: &ModelParams<S>) -> u64 {
    params
        .learnable()
        .iter()
        .map(|entry| entry.tensor.elem_count() as u64)
        .sum()
}

fn build_report(config: &ModelConfig, frames: Option<usize>) -> Result<CostReport> {
    config.validate()?;
    let v = config.joints()? as u64;
    let t = frames.unwrap_or(0) as u64;
    let e = config.embed_dim as u64;
    let cin0 = config.in_channels as u64;
    let (kt, kv) = (config.kernel.0 as u64, config.kernel.1 as u64);
    let h = config.mlp_hidden as u64;
    let k = config.eca_kernel as u64;
    let mlp_in = config.variant.mlp_input_width(v as usize) as u64;
    let flops_on = frames.is_some();
    let gate = |value: u64| if flops_on { value } else { 0 };

    let mut rows: Vec<CostRow> = Vec::new();
    let mut v_squared_rows: Vec<String> = Vec::new();

    rows.push(CostRow {
        name: "embed.conv".into(),
        params: cin0 * e + e,
        state_params: 0,
        flops: gate(2 * t * v * cin0 * e),
    });
    if config.joint_embedding {
        rows.push(CostRow {
            name: "embed.joint".into(),
            params: e * v,
            state_params: 0,
            flops: gate(e * t * v),
        });
    }

    let mut prev = e;
    for (i, &out_channels) in config.channel_schedule.iter().enumerate() {
        let (cin, cout) = (prev, out_channels as u64);
        rows.push(CostRow {
            name: format!("block{i}.conv"),
            params: cin * kt * kv + cin * cout + cout,
            state_params: 0,
            flops: gate(2 * t * v * (cin * kt * kv + cin * cout)),
        });

        // Two MLP branches; pooling reads each half of the channels once per
        // route, plus the 4x4 bin means on the local route.
        let pool_flops = match config.variant {
            PoolingVariant::GlobalOnly => cout * t * v,
            PoolingVariant::LocalOnly => cout * t * v + 2 * 16 * v,
            PoolingVariant::Combined => 2 * cout * t * v + 2 * 16 * v,
        };
        let mlp_flops = 2 * (2 * mlp_in * h + h + h + 2 * h * v + v);
        let outer_softmax = 2 * v * v;
        rows.push(CostRow {
            name: format!("block{i}.attn"),
            params: 2 * (h * mlp_in + h + v * h + v),
            state_params: 0,
            flops: gate(pool_flops + mlp_flops + outer_softmax),
        });
        v_squared_rows.push(format!("block{i}.attn"));

        rows.push(CostRow {
            name: format!("block{i}.fuse"),
            params: 1 + v * v,
            state_params: 0,
            flops: gate(3 * v * v),
        });
        v_squared_rows.push(format!("block{i}.fuse"));

        rows.push(CostRow {
            name: format!("block{i}.apply"),
            params: 0,
            state_params: 0,
            flops: gate(2 * cout * t * v * v),
        });
        v_squared_rows.push(format!("block{i}.apply"));

        rows.push(CostRow {
            name: format!("block{i}.refine"),
            params: k,
            state_params: 0,
            flops: gate(cout * t * v + 2 * k * cout + cout + 2 * cout * t * v),
        });

        rows.push(CostRow {
            name: format!("block{i}.bn"),
            params: 2 * cout,
            state_params: 2 * cout,
            flops: gate(2 * cout * t * v),
        });

        let proj_params = if cin != cout { cin * cout + cout } else { 0 };
        let proj_flops = if cin != cout { 2 * t * v * cin * cout } else { 0 };
        rows.push(CostRow {
            name: format!("block{i}.residual"),
            params: proj_params,
            state_params: 0,
            flops: gate(proj_flops + cout * t * v + cout * t * v),
        });

        prev = cout;
    }

    let klass = config.num_classes as u64;
    rows.push(CostRow {
        name: "head.gap".into(),
        params: 0,
        state_params: 0,
        flops: gate(prev * t * v),
    });
    rows.push(CostRow {
        name: "head.linear".into(),
        params: prev * klass + klass,
        state_params: 0,
        flops: gate(2 * prev * klass + klass),
    });

    let total_params = rows.iter().map(|r| r.params).sum();
    let total_state_params = rows.iter().map(|r| r.state_params).sum();
    let total_flops = rows.iter().map(|r| r.flops).sum();
    Ok(CostReport {
        rows,
        total_params,
        total_state_params,
        total_flops,
        frames: frames.unwrap_or(0),
        joints: v as usize,
        flop_convention: FLOP_CONVENTION.to_string(),
        v_squared_rows,
        config: config.clone(),
    })
}
