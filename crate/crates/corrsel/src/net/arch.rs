//! Architecture strings and the compiled layer plan.
//!
//! A network is described by tokens like `C(32, 1, 4)-GP-R(32, 1, 3)-…`:
//! `C(n, 1, w)` a convolution with `n` output channels over a width-`w`
//! window, `GP` the grouping stage that expands each correspondence into its
//! mined neighborhood, and `R(n, 1, w)` a residual block of two
//! width-preserving convolutions. Every convolution is followed by instance
//! normalization, batch normalization, and ReLU except the network's final
//! one. After each run of equal-channel residual blocks a width-halving max
//! aggregation shrinks the neighbor axis (when it is wider than 1), and any
//! residual width is collapsed by a final max before the head convolutions.

use serde::{Deserialize, Serialize};

use super::NetError;

/// One token of the architecture string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerToken {
    Conv { channels: usize, width: usize },
    Group,
    Res { channels: usize, width: usize },
}

/// Parsed architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Architecture {
    tokens: Vec<LayerToken>,
}

impl TryFrom<String> for Architecture {
    type Error = NetError;

    fn try_from(s: String) -> Result<Self, NetError> {
        Architecture::parse(&s)
    }
}

impl From<Architecture> for String {
    fn from(a: Architecture) -> String {
        a.to_string()
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .tokens
            .iter()
            .map(|t| match t {
                LayerToken::Conv { channels, width } => format!("C({channels}, 1, {width})"),
                LayerToken::Group => "GP".to_string(),
                LayerToken::Res { channels, width } => format!("R({channels}, 1, {width})"),
            })
            .collect();
        write!(f, "{}", parts.join("-"))
    }
}

impl Architecture {
    /// The full-size network: C(32, 1, 4)-GP-R(32, 1, 3)-R(32, 1, 3)-
    /// R(64, 1, 3)-R(64, 1, 3)-R(128, 1, 3)-R(128, 1, 3)-R(256, 1, 3)-
    /// R(256, 1, 3)-C(256, 1, 1)-C(1, 1, 1).
    pub fn standard() -> Self {
        Architecture::parse(
            "C(32, 1, 4)-GP-R(32, 1, 3)-R(32, 1, 3)-R(64, 1, 3)-R(64, 1, 3)-\
             R(128, 1, 3)-R(128, 1, 3)-R(256, 1, 3)-R(256, 1, 3)-C(256, 1, 1)-C(1, 1, 1)",
        )
        .expect("standard architecture parses")
    }

    /// The standard layout with every channel count divided by 8; only used
    /// to make exhaustive gradient checking fast.
    pub fn tiny() -> Self {
        let tokens = Architecture::standard()
            .tokens
            .iter()
            .map(|t| match *t {
                LayerToken::Conv { channels, width } => LayerToken::Conv {
                    channels: (channels / 8).max(1),
                    width,
                },
                LayerToken::Res { channels, width } => LayerToken::Res {
                    channels: (channels / 8).max(1),
                    width,
                },
                LayerToken::Group => LayerToken::Group,
            })
            .collect();
        Architecture { tokens }
    }

    pub fn tokens(&self) -> &[LayerToken] {
        &self.tokens
    }

    pub fn parse(s: &str) -> Result<Self, NetError> {
        let mut tokens = Vec::new();
        for raw in s.split('-') {
            let part = raw.trim();
            if part.is_empty() {
                return Err(NetError::ArchParse("empty token".into()));
            }
            if part == "GP" {
                tokens.push(LayerToken::Group);
                continue;
            }
            let (kind, rest) = part.split_at(1);
            let rest = rest.trim();
            if !rest.starts_with('(') || !rest.ends_with(')') {
                return Err(NetError::ArchParse(format!("malformed token '{part}'")));
            }
            let args: Vec<&str> = rest[1..rest.len() - 1].split(',').map(str::trim).collect();
            if args.len() != 3 {
                return Err(NetError::ArchParse(format!(
                    "token '{part}' needs (channels, height, width)"
                )));
            }
            let nums: Result<Vec<usize>, _> = args.iter().map(|a| a.parse::<usize>()).collect();
            let nums =
                nums.map_err(|e| NetError::ArchParse(format!("token '{part}': {e}")))?;
            if nums[1] != 1 {
                return Err(NetError::ArchParse(format!(
                    "token '{part}': kernel height must be 1"
                )));
            }
            if nums[0] == 0 || nums[2] == 0 {
                return Err(NetError::ArchParse(format!(
                    "token '{part}': zero channels or width"
                )));
            }
            match kind {
                "C" => tokens.push(LayerToken::Conv {
                    channels: nums[0],
                    width: nums[2],
                }),
                "R" => tokens.push(LayerToken::Res {
                    channels: nums[0],
                    width: nums[2],
                }),
                other => {
                    return Err(NetError::ArchParse(format!("unknown layer kind '{other}'")))
                }
            }
        }
        if tokens.is_empty() {
            return Err(NetError::ArchParse("empty architecture".into()));
        }
        if !matches!(tokens.last(), Some(LayerToken::Conv { .. })) {
            return Err(NetError::ArchParse(
                "architecture must end in a convolution".into(),
            ));
        }
        if tokens.iter().filter(|t| matches!(t, LayerToken::Group)).count() > 1 {
            return Err(NetError::ArchParse("at most one grouping stage".into()));
        }
        Ok(Architecture { tokens })
    }
}

/// Compiled ops executed in order. Parameter/buffer indices refer to the
/// blocks laid out by [`compile`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Conv {
        param: usize,
        in_c: usize,
        out_c: usize,
        width: usize,
        padded: bool,
    },
    InstanceNorm {
        param: usize,
        c: usize,
    },
    BatchNorm {
        param: usize,
        buffer: usize,
        c: usize,
    },
    Relu,
    Group,
    /// Width-halving max over adjacent pairs; no-op at width 1.
    HalveWidthMax,
    /// Max over the whole width; no-op at width 1.
    CollapseWidthMax,
    ResBegin,
    ResEnd {
        /// 1×1 projection applied to the skip path when the block changes
        /// the channel count; identity otherwise.
        proj: Option<usize>,
        in_c: usize,
        out_c: usize,
    },
}

/// Shape metadata for one parameter block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    /// Index of the op this block belongs to.
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shape metadata for one non-learned buffer (batch-norm running stats).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSpec {
    pub layer: usize,
    pub name: String,
    pub len: usize,
}

#[derive(Debug)]
pub struct CompiledPlan {
    pub ops: Vec<Op>,
    pub params: Vec<ParamSpec>,
    pub buffers: Vec<BufferSpec>,
    /// Channel count of the network input (1: raw coordinates as width).
    pub input_channels: usize,
}

/// Lowers tokens into the op sequence, allocating parameter blocks.
pub fn compile(arch: &Architecture, input_channels: usize) -> Result<CompiledPlan, NetError> {
    let tokens = arch.tokens();
    let mut ops: Vec<Op> = Vec::new();
    let mut params: Vec<ParamSpec> = Vec::new();
    let mut buffers: Vec<BufferSpec> = Vec::new();
    let mut cur_c = input_channels;
    let mut seen_group = false;
    let mut collapsed_head = false;

    // Spot the final conv: it gets no normalization or activation.
    let last_idx = tokens.len() - 1;

    let add_conv = |ops: &mut Vec<Op>,
                        params: &mut Vec<ParamSpec>,
                        buffers: &mut Vec<BufferSpec>,
                        in_c: usize,
                        out_c: usize,
                        width: usize,
                        padded: bool,
                        with_norm_relu: bool| {
        let layer = ops.len();
        params.push(ParamSpec {
            layer,
            name: "kernel".into(),
            shape: vec![out_c, width, in_c],
        });
        params.push(ParamSpec {
            layer,
            name: "bias".into(),
            shape: vec![out_c],
        });
        ops.push(Op::Conv {
            param: params.len() - 2,
            in_c,
            out_c,
            width,
            padded,
        });
        if with_norm_relu {
            let layer = ops.len();
            params.push(ParamSpec {
                layer,
                name: "gamma".into(),
                shape: vec![out_c],
            });
            params.push(ParamSpec {
                layer,
                name: "beta".into(),
                shape: vec![out_c],
            });
            ops.push(Op::InstanceNorm {
                param: params.len() - 2,
                c: out_c,
            });

            let layer = ops.len();
            params.push(ParamSpec {
                layer,
                name: "gamma".into(),
                shape: vec![out_c],
            });
            params.push(ParamSpec {
                layer,
                name: "beta".into(),
                shape: vec![out_c],
            });
            buffers.push(BufferSpec {
                layer,
                name: "running_mean".into(),
                len: out_c,
            });
            buffers.push(BufferSpec {
                layer,
                name: "running_var".into(),
                len: out_c,
            });
            ops.push(Op::BatchNorm {
                param: params.len() - 2,
                buffer: buffers.len() - 2,
                c: out_c,
            });
            ops.push(Op::Relu);
        }
    };

    for (idx, token) in tokens.iter().enumerate() {
        match *token {
            LayerToken::Conv { channels, width } => {
                // The head convolutions run on a collapsed neighbor axis.
                if seen_group && !collapsed_head {
                    ops.push(Op::CollapseWidthMax);
                    collapsed_head = true;
                }
                // The network's first conv consumes the raw width unpadded;
                // later convs preserve width.
                let padded = idx != 0 && width > 1;
                add_conv(
                    &mut ops,
                    &mut params,
                    &mut buffers,
                    cur_c,
                    channels,
                    width,
                    padded,
                    idx != last_idx,
                );
                cur_c = channels;
            }
            LayerToken::Group => {
                seen_group = true;
                ops.push(Op::Group);
            }
            LayerToken::Res { channels, width } => {
                let in_c = cur_c;
                ops.push(Op::ResBegin);
                add_conv(
                    &mut ops,
                    &mut params,
                    &mut buffers,
                    in_c,
                    channels,
                    width,
                    true,
                    true,
                );
                add_conv(
                    &mut ops,
                    &mut params,
                    &mut buffers,
                    channels,
                    channels,
                    width,
                    true,
                    true,
                );
                let proj = if in_c != channels {
                    let layer = ops.len();
                    params.push(ParamSpec {
                        layer,
                        name: "skip_kernel".into(),
                        shape: vec![channels, 1, in_c],
                    });
                    params.push(ParamSpec {
                        layer,
                        name: "skip_bias".into(),
                        shape: vec![channels],
                    });
                    Some(params.len() - 2)
                } else {
                    None
                };
                ops.push(Op::ResEnd {
                    proj,
                    in_c,
                    out_c: channels,
                });
                cur_c = channels;

                // End of an equal-channel residual stage: aggregate the
                // neighbor axis.
                let stage_ends = match tokens.get(idx + 1) {
                    Some(LayerToken::Res {
                        channels: next_c, ..
                    }) => *next_c != channels,
                    _ => true,
                };
                if stage_ends && seen_group {
                    ops.push(Op::HalveWidthMax);
                }
            }
        }
    }

    Ok(CompiledPlan {
        ops,
        params,
        buffers,
        input_channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_round_trips() {
        let arch = Architecture::standard();
        let s = arch.to_string();
        assert_eq!(
            s,
            "C(32, 1, 4)-GP-R(32, 1, 3)-R(32, 1, 3)-R(64, 1, 3)-R(64, 1, 3)-\
             R(128, 1, 3)-R(128, 1, 3)-R(256, 1, 3)-R(256, 1, 3)-C(256, 1, 1)-C(1, 1, 1)"
        );
        assert_eq!(Architecture::parse(&s).unwrap(), arch);
    }

    #[test]
    fn tiny_divides_channels() {
        let tiny = Architecture::tiny();
        assert_eq!(
            tiny.to_string(),
            "C(4, 1, 4)-GP-R(4, 1, 3)-R(4, 1, 3)-R(8, 1, 3)-R(8, 1, 3)-\
             R(16, 1, 3)-R(16, 1, 3)-R(32, 1, 3)-R(32, 1, 3)-C(32, 1, 1)-C(1, 1, 1)"
        );
    }

    #[test]
    fn parse_rejects_bad_tokens() {
        assert!(Architecture::parse("C(32, 2, 4)").is_err());
        assert!(Architecture::parse("Q(1, 1, 1)").is_err());
        assert!(Architecture::parse("C(32, 1, 4)-GP").is_err());
        assert!(Architecture::parse("").is_err());
        assert!(Architecture::parse("GP-GP-C(1, 1, 1)").is_err());
    }

    #[test]
    fn compile_counts_stage_pools() {
        let plan = compile(&Architecture::standard(), 1).unwrap();
        let halves = plan
            .ops
            .iter()
            .filter(|op| matches!(op, Op::HalveWidthMax))
            .count();
        // One per equal-channel stage: 32, 64, 128, 256.
        assert_eq!(halves, 4);
        let collapses = plan
            .ops
            .iter()
            .filter(|op| matches!(op, Op::CollapseWidthMax))
            .count();
        assert_eq!(collapses, 1);
        // Three channel-changing residual blocks need projections.
        let projections = plan
            .ops
            .iter()
            .filter(|op| matches!(op, Op::ResEnd { proj: Some(_), .. }))
            .count();
        assert_eq!(projections, 3);
        // The final conv is bare: the op sequence ends with it.
        assert!(matches!(plan.ops.last(), Some(Op::Conv { out_c: 1, .. })));
    }

    #[test]
    fn compile_small_head_only() {
        // No grouping: a pure per-correspondence stack still compiles.
        let arch = Architecture::parse("C(8, 1, 4)-C(1, 1, 1)").unwrap();
        let plan = compile(&arch, 1).unwrap();
        assert!(plan.ops.iter().all(|op| !matches!(op, Op::CollapseWidthMax)));
    }
}
