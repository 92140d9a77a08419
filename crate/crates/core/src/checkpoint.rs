//! Plain-text checkpoints: the hierarchy document plus trained heads, with
//! decimal floats carrying enough digits to round-trip bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::heads::{LinearHead, Matrix, TwoLayerHead};
use crate::quantize::{BinEdges, BinScheme, Hierarchy, LevelBins};
use crate::util::fmt_f64;

/// Trained artifacts of a run: the quantization hierarchy, one stage-1 head
/// per level, and optionally the distilled stage-2 head.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hierarchy: Hierarchy,
    pub stage1: Vec<LinearHead>,
    pub stage2: Option<TwoLayerHead>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::from("hca-checkpoint v1\n");
        out.push_str(&hierarchy_to_text(&self.hierarchy));
        for head in &self.stage1 {
            writeln!(out, "[head stage=1 level={} kind=linear]", head.level).unwrap();
            writeln!(out, "shape {} {}", head.weight.rows, head.weight.cols).unwrap();
            for r in 0..head.weight.rows {
                writeln!(out, "weight {}", join(head.weight.row(r))).unwrap();
            }
            writeln!(out, "bias {}", join(&head.bias)).unwrap();
        }
        if let Some(head) = &self.stage2 {
            out.push_str("[head stage=2 kind=two-layer]\n");
            writeln!(
                out,
                "hidden-shape {} {}",
                head.hidden_weight.rows, head.hidden_weight.cols
            )
            .unwrap();
            for r in 0..head.hidden_weight.rows {
                writeln!(out, "hidden-weight {}", join(head.hidden_weight.row(r))).unwrap();
            }
            writeln!(out, "hidden-bias {}", join(&head.hidden_bias)).unwrap();
            writeln!(
                out,
                "out-shape {} {}",
                head.out_weight.rows, head.out_weight.cols
            )
            .unwrap();
            for r in 0..head.out_weight.rows {
                writeln!(out, "out-weight {}", join(head.out_weight.row(r))).unwrap();
            }
            writeln!(out, "out-bias {}", join(&head.out_bias)).unwrap();
        }
        out.push_str("[end]\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Checkpoint> {
        let mut cur = Cursor::new(text);
        cur.expect_line("hca-checkpoint v1")?;
        let hierarchy = parse_hierarchy(&mut cur)?;
        let mut stage1 = Vec::new();
        let mut stage2 = None;
        loop {
            let (line_no, line) = cur.next_nonempty()?;
            if line == "[end]" {
                break;
            }
            if let Some(rest) = line
                .strip_prefix("[head stage=1 level=")
                .and_then(|r| r.strip_suffix(" kind=linear]"))
            {
                let level: usize = rest.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad head level `{rest}`"),
                })?;
                let (rows, cols) = cur.fixed_pair("shape")?;
                let mut weight = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let vals = cur.floats_after("weight", cols)?;
                    weight.data[r * cols..(r + 1) * cols].copy_from_slice(&vals);
                }
                let bias = cur.floats_after("bias", rows)?;
                stage1.push(LinearHead {
                    level,
                    weight,
                    bias,
                });
            } else if line == "[head stage=2 kind=two-layer]" {
                let (h_rows, h_cols) = cur.fixed_pair("hidden-shape")?;
                let mut hidden_weight = Matrix::zeros(h_rows, h_cols);
                for r in 0..h_rows {
                    let vals = cur.floats_after("hidden-weight", h_cols)?;
                    hidden_weight.data[r * h_cols..(r + 1) * h_cols].copy_from_slice(&vals);
                }
                let hidden_bias = cur.floats_after("hidden-bias", h_rows)?;
                let (o_rows, o_cols) = cur.fixed_pair("out-shape")?;
                let mut out_weight = Matrix::zeros(o_rows, o_cols);
                for r in 0..o_rows {
                    let vals = cur.floats_after("out-weight", o_cols)?;
                    out_weight.data[r * o_cols..(r + 1) * o_cols].copy_from_slice(&vals);
                }
                let out_bias = cur.floats_after("out-bias", o_rows)?;
                stage2 = Some(TwoLayerHead {
                    hidden_weight,
                    hidden_bias,
                    out_weight,
                    out_bias,
                });
            } else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unexpected section `{line}`"),
                });
            }
        }
        Ok(Checkpoint {
            hierarchy,
            stage1,
            stage2,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        Checkpoint::from_text(&text)
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(fmt_f64swap).collect::<Vec<_>>().join(" ")
}

fn fmt_f64swap(x: &f64) -> String {
    fmt_f64(*x)
}

fn join_usize(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// The hierarchy as a standalone structured-text document: scheme, edges,
/// per-level groupings, representatives, and training counts.
pub fn hierarchy_to_text(hier: &Hierarchy) -> String {
    let mut out = String::from("[hierarchy]\n");
    let scheme = match hier.finest().scheme() {
        BinScheme::Linear => "linear".to_string(),
        BinScheme::Log { offset } => format!("log {}", fmt_f64(offset)),
        BinScheme::EqualCount => "equal-count".to_string(),
    };
    writeln!(out, "scheme {scheme}").unwrap();
    writeln!(out, "levels {}", hier.num_levels()).unwrap();
    writeln!(
        out,
        "finest-edges {} {}",
        hier.finest().edges().len(),
        join(hier.finest().edges())
    )
    .unwrap();
    for (i, level) in hier.levels().iter().enumerate() {
        writeln!(out, "[level {}]", i + 1).unwrap();
        writeln!(out, "classes {}", level.num_classes()).unwrap();
        writeln!(out, "edge-indices {}", join_usize(&level.edge_idx)).unwrap();
        writeln!(out, "groups {}", join_usize(&level.group_of)).unwrap();
        writeln!(out, "representatives {}", join(&level.representatives)).unwrap();
        writeln!(out, "counts {}", join_usize(&level.train_counts)).unwrap();
    }
    out
}

pub fn hierarchy_from_text(text: &str) -> Result<Hierarchy> {
    let mut cur = Cursor::new(text);
    parse_hierarchy(&mut cur)
}

fn parse_hierarchy(cur: &mut Cursor) -> Result<Hierarchy> {
    cur.expect_line("[hierarchy]")?;
    let (line_no, scheme_line) = cur.next_nonempty()?;
    let scheme = {
        let rest = scheme_line
            .strip_prefix("scheme ")
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected `scheme <name>`".into(),
            })?;
        if rest == "linear" {
            BinScheme::Linear
        } else if rest == "equal-count" {
            BinScheme::EqualCount
        } else if let Some(off) = rest.strip_prefix("log ") {
            BinScheme::Log {
                offset: off.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad log offset `{off}`"),
                })?,
            }
        } else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("unknown scheme `{rest}`"),
            });
        }
    };
    let levels_n = cur.usize_after("levels")?;
    let (line_no, edges_line) = cur.next_nonempty()?;
    let edges: Vec<f64> = {
        let rest = edges_line
            .strip_prefix("finest-edges ")
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected `finest-edges <n> <values…>`".into(),
            })?;
        let mut parts = rest.split_whitespace();
        let n: usize = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: "missing edge count".into(),
            })?;
        let vals = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad edge value `{p}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != n {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {n} edges, found {}", vals.len()),
            });
        }
        vals
    };
    let finest = BinEdges::from_edges(edges, scheme)?;
    let fine_classes = finest.num_classes();

    let mut levels = Vec::with_capacity(levels_n);
    for i in 1..=levels_n {
        cur.expect_line(&format!("[level {i}]"))?;
        let classes = cur.usize_after("classes")?;
        let edge_idx = cur.usizes_after("edge-indices", classes + 1)?;
        let group_of = cur.usizes_after("groups", fine_classes)?;
        let representatives = cur.floats_after("representatives", classes)?;
        let train_counts = cur.usizes_after("counts", classes)?;
        levels.push(LevelBins {
            edge_idx,
            group_of,
            representatives,
            train_counts,
        });
    }
    Ok(Hierarchy::from_parts(finest, levels, Vec::new()))
}

struct Cursor<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
        }
    }

    fn next_nonempty(&mut self) -> Result<(usize, &'a str)> {
        for (i, line) in self.lines.by_ref() {
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                return Ok((i + 1, trimmed));
            }
        }
        Err(Error::Parse {
            line: 0,
            message: "unexpected end of checkpoint".into(),
        })
    }

    fn expect_line(&mut self, want: &str) -> Result<()> {
        let (line_no, got) = self.next_nonempty()?;
        if got != want {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected `{want}`, found `{got}`"),
            });
        }
        Ok(())
    }

    fn usize_after(&mut self, key: &str) -> Result<usize> {
        let (line_no, line) = self.next_nonempty()?;
        line.strip_prefix(key)
            .map(str::trim)
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected `{key} <count>`, found `{line}`"),
            })
    }

    fn fixed_pair(&mut self, key: &str) -> Result<(usize, usize)> {
        let (line_no, line) = self.next_nonempty()?;
        let rest = line.strip_prefix(key).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected `{key} <rows> <cols>`, found `{line}`"),
        })?;
        let mut parts = rest.split_whitespace();
        match (
            parts.next().and_then(|p| p.parse().ok()),
            parts.next().and_then(|p| p.parse().ok()),
        ) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Parse {
                line: line_no,
                message: format!("expected `{key} <rows> <cols>`, found `{line}`"),
            }),
        }
    }

    fn floats_after(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        let (line_no, line) = self.next_nonempty()?;
        let rest = line.strip_prefix(key).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected `{key} <values…>`, found `{line}`"),
        })?;
        let vals = rest
            .split_whitespace()
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad float `{p}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != n {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {n} values after `{key}`, found {}", vals.len()),
            });
        }
        Ok(vals)
    }

    fn usizes_after(&mut self, key: &str, n: usize) -> Result<Vec<usize>> {
        let (line_no, line) = self.next_nonempty()?;
        let rest = line.strip_prefix(key).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected `{key} <values…>`, found `{line}`"),
        })?;
        let vals = rest
            .split_whitespace()
            .map(|p| {
                p.parse::<usize>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad index `{p}`"),
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        if vals.len() != n {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {n} values after `{key}`, found {}", vals.len()),
            });
        }
        Ok(vals)
    }
}
