//! Plain-text network files.
//!
//! ```text
//! repcost-network 1
//! dims 1 2
//! widths 3
//! inner relu
//! link identity
//! skips none
//! stack 1
//! v 3 1
//! <3 rows of 1 number>
//! b 3
//! <one row of 3 numbers>
//! w 2 3
//! <2 rows of 3 numbers>
//! c 2
//! <one row of 2 numbers>
//! ```
//!
//! A stack with a `linear` skip adds a record `A d_j d_{j-1}`; a `factored`
//! skip adds `A2 d_j m` and `A1 m d_{j-1}`. Matrices are written row-major.
//! Numbers use the shortest representation that parses back to the same
//! `f64`. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{Architecture, InnerActivation, Link, NetworkParams, Skip, SkipKind, StackParams};
use crate::error::{Error, Result};

const MAGIC: &str = "repcost-network";
const VERSION: &str = "1";

pub fn network_to_string(net: &NetworkParams, arch: &Architecture) -> String {
    let mut s = String::new();
    let join = |xs: &[usize]| xs.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "dims {}", join(&arch.dims));
    let _ = writeln!(s, "widths {}", join(&arch.widths));
    let _ = writeln!(s, "inner {}", arch.inner_activation.name());
    let _ = writeln!(s, "link {}", arch.link.name());
    let skips: Vec<_> = arch.skips.iter().map(|k| k.name()).collect();
    let _ = writeln!(s, "skips {}", skips.join(" "));
    for (j, stack) in net.stacks.iter().enumerate() {
        let _ = writeln!(s, "stack {}", j + 1);
        write_matrix(&mut s, "v", &stack.v);
        write_vector(&mut s, "b", &stack.b);
        write_matrix(&mut s, "w", &stack.w);
        write_vector(&mut s, "c", &stack.c);
        match &stack.skip {
            None => {}
            Some(Skip::Linear(a)) => write_matrix(&mut s, "A", a),
            Some(Skip::Factored { outer, inner }) => {
                write_matrix(&mut s, "A2", outer);
                write_matrix(&mut s, "A1", inner);
            }
        }
    }
    s
}

fn write_matrix(s: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(s, "{name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
}

fn write_vector(s: &mut String, name: &str, v: &DVector<f64>) {
    let _ = writeln!(s, "{name} {}", v.len());
    let row: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    let _ = writeln!(s, "{}", row.join(" "));
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#'))
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Tokens { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(1, |t| t.0)
    }

    fn next(&mut self) -> Result<&'a str> {
        let line = self.line();
        let tok = self
            .items
            .get(self.pos)
            .ok_or_else(|| Error::parse(line, "unexpected end of file"))?;
        self.pos += 1;
        Ok(tok.1)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let line = self.line();
        let tok = self.next()?;
        if tok != word {
            return Err(Error::parse(line, format!("expected `{word}`, found `{tok}`")));
        }
        Ok(())
    }

    fn usize(&mut self) -> Result<usize> {
        let line = self.line();
        let tok = self.next()?;
        tok.parse()
            .map_err(|_| Error::parse(line, format!("expected a non-negative integer, found `{tok}`")))
    }

    fn f64(&mut self) -> Result<f64> {
        let line = self.line();
        let tok = self.next()?;
        let x: f64 = tok
            .parse()
            .map_err(|_| Error::parse(line, format!("expected a number, found `{tok}`")))?;
        if !x.is_finite() {
            return Err(Error::parse(line, "non-finite parameter"));
        }
        Ok(x)
    }

    /// Reads words until the next keyword in `stop` or end of input.
    fn words_until(&mut self, stop: &[&str]) -> Vec<&'a str> {
        let mut out = Vec::new();
        while let Some(&(_, t)) = self.items.get(self.pos) {
            if stop.contains(&t) {
                break;
            }
            out.push(t);
            self.pos += 1;
        }
        out
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let line = self.line();
        self.expect(name)?;
        let (r, c) = (self.usize()?, self.usize()?);
        if (r, c) != (rows, cols) {
            return Err(Error::parse(
                line,
                format!("{name} is {r}x{c}, architecture requires {rows}x{cols}"),
            ));
        }
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r * c {
            data.push(self.f64()?);
        }
        Ok(DMatrix::from_row_slice(r, c, &data))
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<DVector<f64>> {
        let line = self.line();
        self.expect(name)?;
        let n = self.usize()?;
        if n != len {
            return Err(Error::parse(line, format!("{name} has {n} entries, architecture requires {len}")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64()?);
        }
        Ok(DVector::from_vec(data))
    }
}

const HEADER_KEYS: [&str; 6] = ["dims", "widths", "inner", "link", "skips", "stack"];

pub fn network_from_str(text: &str) -> Result<(NetworkParams, Architecture)> {
    let mut t = Tokens::new(text);
    t.expect(MAGIC)?;
    let line = t.line();
    let version = t.next()?;
    if version != VERSION {
        return Err(Error::parse(line, format!("unsupported format version `{version}`")));
    }

    let parse_list = |t: &mut Tokens, key: &str| -> Result<Vec<usize>> {
        t.expect(key)?;
        let line = t.line();
        t.words_until(&HEADER_KEYS)
            .into_iter()
            .map(|w| {
                w.parse()
                    .map_err(|_| Error::parse(line, format!("bad entry `{w}` in {key}")))
            })
            .collect()
    };
    let dims = parse_list(&mut t, "dims")?;
    let widths = parse_list(&mut t, "widths")?;

    t.expect("inner")?;
    let line = t.line();
    let inner_tok = t.next()?;
    let inner = InnerActivation::parse(inner_tok)
        .ok_or_else(|| Error::parse(line, format!("unknown inner activation `{inner_tok}`")))?;
    t.expect("link")?;
    let line = t.line();
    let link_tok = t.next()?;
    if link_tok != "identity" {
        return Err(Error::parse(line, format!("unsupported link `{link_tok}`")));
    }
    t.expect("skips")?;
    let line = t.line();
    let skips = t
        .words_until(&HEADER_KEYS)
        .into_iter()
        .map(|w| SkipKind::parse(w).ok_or_else(|| Error::parse(line, format!("unknown skip kind `{w}`"))))
        .collect::<Result<Vec<_>>>()?;

    let arch = Architecture {
        dims,
        widths,
        inner_activation: inner,
        link: Link::Identity,
        skips,
    };
    arch.validate().map_err(|e| Error::parse(line, e.to_string()))?;

    let mut stacks = Vec::with_capacity(arch.num_stacks());
    for j in 0..arch.num_stacks() {
        let line = t.line();
        t.expect("stack")?;
        let idx = t.usize()?;
        if idx != j + 1 {
            return Err(Error::parse(line, format!("expected stack {}, found {idx}", j + 1)));
        }
        let (d_prev, n, d_next) = (arch.dims[j], arch.widths[j], arch.dims[j + 1]);
        let v = t.matrix("v", n, d_prev)?;
        let b = t.vector("b", n)?;
        let w = t.matrix("w", d_next, n)?;
        let c = t.vector("c", d_next)?;
        let skip = match arch.skips[j] {
            SkipKind::None => None,
            SkipKind::Linear => Some(Skip::Linear(t.matrix("A", d_next, d_prev)?)),
            SkipKind::FactoredLinear => {
                let m = arch.factored_rank(j);
                let outer = t.matrix("A2", d_next, m)?;
                let inner = t.matrix("A1", m, d_prev)?;
                Some(Skip::Factored { outer, inner })
            }
        };
        stacks.push(StackParams { v, b, w, c, skip });
    }
    if t.pos != t.items.len() {
        return Err(Error::parse(t.line(), "trailing content after last stack"));
    }
    let net = NetworkParams { stacks };
    net.check(&arch)?;
    Ok((net, arch))
}

pub fn write_network(path: &Path, net: &NetworkParams, arch: &Architecture) -> Result<()> {
    std::fs::write(path, network_to_string(net, arch)).map_err(|e| Error::io(path, e))
}

pub fn read_network(path: &Path) -> Result<(NetworkParams, Architecture)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    network_from_str(&text)
}
