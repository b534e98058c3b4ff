//! Kernel-size ablation variants.
//!
//! "Proportional" variants are the TIM presets, whose kernel sizes grow with
//! the subsequence length. "Constant" variants give every branch the same
//! two kernel groups, 12 kernels of size 2 and `n3` of size 3, with `n3`
//! chosen so the embedding size tracks the proportional counterpart.

use timgcn_core::tim::{embedding_dim, BranchSpec, TimConfig};

/// Allowed relative gap between constant and proportional embedding sizes.
pub const MAX_DIM_GAP: f64 = 0.05;
const SIZE2_COUNT: usize = 12;
const SIZE3_START: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scales {
    S5_10,
    S5_10_15,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub scales: Scales,
    pub proportional: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant {
            scales: Scales::S5_10,
            proportional: true,
        },
        Variant {
            scales: Scales::S5_10,
            proportional: false,
        },
        Variant {
            scales: Scales::S5_10_15,
            proportional: true,
        },
        Variant {
            scales: Scales::S5_10_15,
            proportional: false,
        },
    ];

    pub fn name(&self) -> String {
        let scales = match self.scales {
            Scales::S5_10 => "5-10",
            Scales::S5_10_15 => "5-10-15",
        };
        let kind = if self.proportional { "proportional" } else { "constant" };
        format!("{scales}-{kind}")
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn all_names() -> Vec<String> {
        Self::ALL.iter().map(Variant::name).collect()
    }

    fn proportional_config(&self) -> TimConfig {
        match self.scales {
            Scales::S5_10 => TimConfig::tim_5_10(),
            Scales::S5_10_15 => TimConfig::tim_5_10_15(),
        }
    }

    /// TIM configuration of this variant.
    pub fn tim_config(&self) -> TimConfig {
        let reference = self.proportional_config();
        if self.proportional {
            return reference;
        }
        let lens: Vec<usize> = reference.branches().iter().map(|b| b.subseq_len).collect();
        let target = embedding_dim(&reference);
        let n3 = best_size3_count(&lens, target);
        constant_config(&lens, n3)
    }
}

fn constant_config(lens: &[usize], n3: usize) -> TimConfig {
    let branches = lens
        .iter()
        .map(|&s| BranchSpec::new(s, &[(SIZE2_COUNT, 2), (n3, 3)]))
        .collect();
    TimConfig::new(branches).expect("subsequence lengths >= 3")
}

/// Size-3 kernel count whose embedding size is closest to `target`
/// (ties keep the smaller count). Searching outward from the nominal count
/// is enough because the size grows linearly in `n3`.
fn best_size3_count(lens: &[usize], target: usize) -> usize {
    let dim = |n3: usize| embedding_dim(&constant_config(lens, n3));
    let upper = SIZE3_START.max(target);
    (1..=upper)
        .min_by_key(|&n| (dim(n).abs_diff(target), n))
        .expect("non-empty range")
}

/// Relative embedding-size gap to the proportional counterpart.
pub fn dim_gap(v: &Variant) -> f64 {
    let reference = embedding_dim(
        &Variant {
            proportional: true,
            ..*v
        }
        .tim_config(),
    );
    let own = embedding_dim(&v.tim_config());
    own.abs_diff(reference) as f64 / reference as f64
}

/// Field-level differences between two TIM configurations, one line each.
pub fn tim_diff(a: &TimConfig, b: &TimConfig) -> Vec<String> {
    let mut out = Vec::new();
    let n = a.branches().len().max(b.branches().len());
    for j in 0..n {
        let fmt = |c: &TimConfig| {
            c.branches().get(j).map(|br| {
                let ks: Vec<String> = br.kernels.iter().map(|k| format!("({},{})", k.count, k.size)).collect();
                format!("M={} {}", br.subseq_len, ks.join(" "))
            })
        };
        let (x, y) = (fmt(a), fmt(b));
        if x != y {
            out.push(format!(
                "branch {j}: {} -> {}",
                x.unwrap_or_else(|| "absent".into()),
                y.unwrap_or_else(|| "absent".into())
            ));
        }
    }
    out
}
