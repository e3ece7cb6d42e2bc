//! Text file formats: edge lists, labels, models, and the synthetic truth
//! sidecar. All files are UTF-8, comma separated, `\n` terminated, with `.`
//! as the decimal separator. Reals are written in shortest round-trip form,
//! so a save/load cycle is exact.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::baselines::{Grade, GradeMatrix, Vote, VoteMatrix};
use crate::datagen::SynthTruth;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::lstm::LstmParams;
use crate::model::{level_shape, LabeledDataset, MlslModel, OutputMode, Target};

pub const MODEL_FORMAT: &str = "mlsl-model";
pub const MODEL_VERSION: u32 = 1;

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        msg: msg.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(path.to_owned(), e)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(path.to_owned(), io),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '\n', '\r', '"']) {
        return Err(Error::invalid(format!(
            "node id {id:?} cannot be written to an edge list"
        )));
    }
    Ok(())
}

/// Reads an edge list with header `src,dst,f1,…,fM`. Edge order is kept.
pub fn load_graph(path: &Path) -> Result<Graph> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 || &header[0] != "src" || &header[1] != "dst" {
        return Err(parse_err(path, 1, "expected header `src,dst,f1,...`"));
    }
    let width = header.len() - 2;
    let mut graph = Graph::new(width);
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, found {}", header.len(), rec.len()),
            ));
        }
        let features = rec
            .iter()
            .skip(2)
            .map(|s| match s.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(path, line, format!("bad feature value {s:?}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        graph.add_named_edge(&rec[0], &rec[1], features)?;
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, 1, "edge list has no rows"));
    }
    Ok(graph)
}

pub fn save_graph(graph: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("src,dst");
    for k in 1..=graph.feature_width() {
        out.push_str(&format!(",f{k}"));
    }
    out.push('\n');
    for e in graph.edges() {
        let (s, d) = (graph.name(e.src), graph.name(e.dst));
        check_id(s)?;
        check_id(d)?;
        out.push_str(s);
        out.push(',');
        out.push_str(d);
        for v in &e.features {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads `node,label` rows. With `classes` unset the class count is the
/// largest label plus one.
pub fn load_labels(path: &Path, graph: &Graph, classes: Option<usize>) -> Result<LabeledDataset> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() != 2 || &header[0] != "node" || &header[1] != "label" {
        return Err(parse_err(path, 1, "expected header `node,label`"));
    }
    let mut examples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 2 {
            return Err(parse_err(path, line, format!("expected 2 columns, found {}", rec.len())));
        }
        let node = graph
            .node(&rec[0])
            .ok_or_else(|| parse_err(path, line, format!("unknown node {:?}", &rec[0])))?;
        let label: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad label {:?}", &rec[1])))?;
        examples.push((node, Target::Class(label)));
    }
    let max = examples
        .iter()
        .filter_map(|(_, t)| match t {
            Target::Class(c) => Some(*c),
            Target::Values(_) => None,
        })
        .max()
        .unwrap_or(0);
    let ds = LabeledDataset {
        examples,
        classes: Some(classes.unwrap_or(max + 1)),
    };
    ds.validate(graph)?;
    Ok(ds)
}

pub fn save_labels(ds: &LabeledDataset, graph: &Graph, path: &Path) -> Result<()> {
    let mut out = String::from("node,label\n");
    for (node, target) in &ds.examples {
        let Target::Class(c) = target else {
            return Err(Error::invalid("label files hold class labels only"));
        };
        check_id(graph.name(*node))?;
        out.push_str(&format!("{},{}\n", graph.name(*node), c));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Hidden truth of a synthetic run: `node,role,truth,indicator`, items
/// first (`truth` is the `±1` label), then users (`truth` is 1 for
/// reliable). `indicator` is empty when the feature is disabled.
pub fn save_truth(truth: &SynthTruth, path: &Path) -> Result<()> {
    let mut out = String::from("node,role,truth,indicator\n");
    for (i, y) in truth.labels.iter().enumerate() {
        out.push_str(&format!("i{i},item,{y},\n"));
    }
    for (j, r) in truth.reliable.iter().enumerate() {
        let ind = match &truth.indicator {
            Some(v) => u8::from(v[j]).to_string(),
            None => String::new(),
        };
        out.push_str(&format!("u{j},user,{},{ind}\n", u8::from(*r)));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Item/worker indexing of a bipartite `item → worker` edge list.
#[derive(Clone, Debug, PartialEq)]
pub struct Bipartite {
    /// Graph node of each item index.
    pub items: Vec<NodeId>,
    pub workers: Vec<NodeId>,
    pub item_index: HashMap<NodeId, usize>,
}

fn bipartite(graph: &Graph) -> Bipartite {
    let mut items = Vec::new();
    let mut workers = Vec::new();
    let mut item_index = HashMap::new();
    let mut worker_index = HashMap::new();
    for e in graph.edges() {
        item_index.entry(e.src).or_insert_with(|| {
            items.push(e.src);
            items.len() - 1
        });
        worker_index.entry(e.dst).or_insert_with(|| {
            workers.push(e.dst);
            workers.len() - 1
        });
    }
    Bipartite {
        items,
        workers,
        item_index,
    }
}

fn worker_lookup(b: &Bipartite) -> HashMap<NodeId, usize> {
    b.workers.iter().enumerate().map(|(k, &n)| (n, k)).collect()
}

/// Votes read from feature 0 of each `item → worker` edge, which must be
/// `±1`.
pub fn votes_from_graph(graph: &Graph) -> Result<(VoteMatrix, Bipartite)> {
    let b = bipartite(graph);
    let workers = worker_lookup(&b);
    let votes = graph
        .edges()
        .iter()
        .map(|e| {
            let v = e.features.first().copied().unwrap_or(f64::NAN);
            let value = if v == 1.0 {
                1
            } else if v == -1.0 {
                -1
            } else {
                return Err(Error::invalid(format!(
                    "edge {} -> {} has vote {v}; vote baselines need ±1 in the first feature",
                    graph.name(e.src),
                    graph.name(e.dst)
                )));
            };
            Ok(Vote {
                item: b.item_index[&e.src],
                worker: workers[&e.dst],
                value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((VoteMatrix::new(b.items.len(), b.workers.len(), votes)?, b))
}

/// Grades read from feature 0 of each `item → worker` edge.
pub fn grades_from_graph(graph: &Graph) -> Result<(GradeMatrix, Bipartite)> {
    let b = bipartite(graph);
    let workers = worker_lookup(&b);
    let grades = graph
        .edges()
        .iter()
        .map(|e| Grade {
            item: b.item_index[&e.src],
            worker: workers[&e.dst],
            value: e.features.first().copied().unwrap_or(f64::NAN),
        })
        .collect();
    Ok((GradeMatrix::new(b.items.len(), b.workers.len(), grades)?, b))
}

/// Copy of `graph` with every feature column scaled to zero mean and unit
/// variance. Constant columns are only centered. Returns `(mean, std)` per
/// column.
pub fn standardize(graph: &Graph) -> (Graph, Vec<(f64, f64)>) {
    let m = graph.feature_width();
    let n = graph.edge_count().max(1) as f64;
    let stats: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let mean = graph.edges().iter().map(|e| e.features[k]).sum::<f64>() / n;
            let var = graph
                .edges()
                .iter()
                .map(|e| (e.features[k] - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
        .collect();
    let mut out = Graph::new(m);
    for id in graph.nodes() {
        out.add_node(graph.name(id));
    }
    for e in graph.edges() {
        let f = e
            .features
            .iter()
            .zip(&stats)
            .map(|(v, &(mean, sd))| if sd > 0.0 { (v - mean) / sd } else { v - mean })
            .collect();
        out.add_edge(e.src, e.dst, f).expect("same shape as the source graph");
    }
    (out, stats)
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Serializes a model as text: a header with version, depth, feature
/// width, level sizes and output mode, then for each level its input
/// weights, recurrent weights and biases row by row.
pub fn model_to_string(model: &MlslModel) -> String {
    let mut out = String::new();
    out.push_str(&format!("{MODEL_FORMAT} {MODEL_VERSION}\n"));
    out.push_str(&format!("depth {}\n", model.depth()));
    out.push_str(&format!("feature_width {}\n", model.feature_width()));
    let sizes: Vec<String> = model.level_sizes().iter().map(|k| k.to_string()).collect();
    out.push_str(&format!("level_sizes {}\n", sizes.join(" ")));
    let mode = match model.output_mode() {
        OutputMode::Classification => "classification",
        OutputMode::Regression => "regression",
    };
    out.push_str(&format!("output {mode}\n"));
    for (d, l) in model.learners().iter().enumerate() {
        let s = l.shape();
        let (n, k) = (s.input, s.output);
        out.push_str(&format!("level {} input {n} output {k}\n", d + 1));
        let v = l.values();
        out.push_str("w_in\n");
        for row in v[..4 * k * n].chunks(n) {
            out.push_str(&join(row));
            out.push('\n');
        }
        out.push_str("w_rec\n");
        for row in v[4 * k * n..4 * k * (n + k)].chunks(k) {
            out.push_str(&join(row));
            out.push('\n');
        }
        out.push_str("bias\n");
        out.push_str(&join(&v[4 * k * (n + k)..]));
        out.push('\n');
    }
    out
}

pub fn save_model(model: &MlslModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_string(model)).map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<MlslModel> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    model_from_str(&text, path)
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: u64,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i as u64 + 1;
                Ok(l)
            }
            None => Err(parse_err(self.path, self.line + 1, "unexpected end of model file")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        parse_err(self.path, self.line, msg)
    }

    /// Next line as `key v1 v2 …`.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(parts.collect())
    }

    fn usize_of(&self, s: &str) -> Result<usize> {
        s.parse().map_err(|_| self.err(format!("bad integer {s:?}")))
    }

    fn reals(&mut self, count: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let vals = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| self.err(format!("bad number {s:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != count {
            return Err(Error::dim(format!(
                "{}:{}: expected {count} values, found {}",
                self.path.display(),
                self.line,
                vals.len()
            )));
        }
        Ok(vals)
    }
}

pub fn model_from_str(text: &str, path: &Path) -> Result<MlslModel> {
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate(),
        line: 0,
    };
    let version = lines.keyed(MODEL_FORMAT)?;
    if version != [MODEL_VERSION.to_string().as_str()] {
        return Err(lines.err(format!(
            "unsupported model format version {version:?}, expected {MODEL_VERSION}"
        )));
    }
    let depth = match lines.keyed("depth")?.as_slice() {
        [d] => lines.usize_of(d)?,
        _ => return Err(lines.err("malformed depth")),
    };
    let width = match lines.keyed("feature_width")?.as_slice() {
        [m] => lines.usize_of(m)?,
        _ => return Err(lines.err("malformed feature_width")),
    };
    let sizes = lines
        .keyed("level_sizes")?
        .iter()
        .map(|s| lines.usize_of(s))
        .collect::<Result<Vec<usize>>>()?;
    if sizes.len() != depth {
        return Err(Error::dim(format!(
            "model declares depth {depth} but {} level sizes",
            sizes.len()
        )));
    }
    let output = match lines.keyed("output")?.as_slice() {
        ["classification"] => OutputMode::Classification,
        ["regression"] => OutputMode::Regression,
        _ => return Err(lines.err("unknown output mode")),
    };
    let mut learners = Vec::with_capacity(depth);
    for d in 1..=depth {
        let shape = level_shape(width, &sizes, d)?;
        let head = lines.keyed("level")?;
        let declared = match head.as_slice() {
            [lvl, "input", n, "output", k] => (
                lines.usize_of(lvl)?,
                lines.usize_of(n)?,
                lines.usize_of(k)?,
            ),
            _ => return Err(lines.err("malformed level header")),
        };
        if declared != (d, shape.input, shape.output) {
            return Err(Error::dim(format!(
                "level {} declared as {:?}, header implies ({}, {})",
                d, declared, shape.input, shape.output
            )));
        }
        let (n, k) = (shape.input, shape.output);
        let mut values = Vec::with_capacity(shape.param_count());
        lines.keyed("w_in")?;
        for _ in 0..4 * k {
            values.extend(lines.reals(n)?);
        }
        lines.keyed("w_rec")?;
        for _ in 0..4 * k {
            values.extend(lines.reals(k)?);
        }
        lines.keyed("bias")?;
        values.extend(lines.reals(4 * k)?);
        learners.push(LstmParams::from_values(shape, values)?);
    }
    MlslModel::from_learners(width, &sizes, output, learners)
}

/// Signed quality of revision `r1` as judged from the later revision `r2`,
/// from the edit distances `d(r0,r1)`, `d(r0,r2)`, `d(r1,r2)`:
/// `d01 / (d02 - d12)`, clamped to `[-1, 1]`. A vanishing denominator or a
/// zero-size change yields 0.
pub fn compute_quality(d01: f64, d02: f64, d12: f64) -> Result<f64> {
    for (name, v) in [("d01", d01), ("d02", d02), ("d12", d12)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::invalid(format!("edit distance {name} = {v} must be non-negative")));
        }
    }
    let den = d02 - d12;
    if d01 == 0.0 || den.abs() < 1e-9 {
        return Ok(0.0);
    }
    let q = d01 / den;
    if q.abs() > 1.0 {
        log::debug!("quality {q} clamped to [-1, 1]");
    }
    Ok(q.clamp(-1.0, 1.0))
}
