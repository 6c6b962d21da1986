//! Nested-loop evaluation of a parsed statement.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use crate::ann::{AnnIndex, Strategy};
use crate::embedding::{EmbeddingModel, OovPolicy, RowAttributeCache};
use crate::error::{Error, Result};
use crate::query::ast::{CmpOp, ColumnRef, Direction, Expr, Literal, Qualifier, QueryAst, Source};
use crate::query::registry::{Aggregate, Function, Udf};
use crate::table::{RelationalTable, Value};
use crate::textify::text::{key_token, TextNormalizer};
use crate::textify::TableTextifier;
use crate::udf::{self, AnalogyMethod, AttributeFlag};

/// Tables available to queries, each with the textifier that produced its
/// corpus so UDFs see cells exactly as training did.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    tables: Vec<(RelationalTable, TableTextifier)>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a table, fitting a default textifier.
    pub fn add(&mut self, table: RelationalTable) -> Result<()> {
        let textifier = TableTextifier::fit(&table)?;
        self.add_with_textifier(table, textifier);
        Ok(())
    }

    pub fn add_with_textifier(&mut self, table: RelationalTable, textifier: TableTextifier) {
        self.tables
            .retain(|(t, _)| !t.name().eq_ignore_ascii_case(table.name()));
        self.tables.push((table, textifier));
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.tables
            .iter()
            .position(|(t, _)| t.name().eq_ignore_ascii_case(name))
    }

    pub fn get(&self, name: &str) -> Option<&RelationalTable> {
        self.position(name).map(|i| &self.tables[i].0)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tables.iter().map(|(t, _)| t.name()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

/// Query result: headers plus rows of plain values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub stats: QueryStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueryStats {
    /// UDF evaluations actually computed.
    pub udf_evaluations: usize,
    /// UDF calls answered from the per-query memo.
    pub memo_hits: usize,
    /// Row combinations rejected by an ANN prefilter before evaluation.
    pub prefiltered: usize,
}

/// Everything a statement may need at execution time.
#[derive(Debug, Clone, Copy)]
pub struct Engine<'a> {
    pub catalog: &'a Catalog,
    pub model: Option<&'a EmbeddingModel>,
    /// Model for the `...ForExtKB` UDFs; falls back to `model`.
    pub ext_model: Option<&'a EmbeddingModel>,
    pub cache: Option<&'a RowAttributeCache>,
    pub index: Option<&'a AnnIndex>,
    pub strategy: Strategy,
    pub policy: OovPolicy,
}

impl<'a> Engine<'a> {
    pub fn new(catalog: &'a Catalog) -> Self {
        Engine {
            catalog,
            model: None,
            ext_model: None,
            cache: None,
            index: None,
            strategy: Strategy::Exact,
            policy: OovPolicy::default(),
        }
    }

    pub fn with_model(mut self, model: &'a EmbeddingModel) -> Self {
        self.model = Some(model);
        self
    }

    pub fn with_ext_model(mut self, model: &'a EmbeddingModel) -> Self {
        self.ext_model = Some(model);
        self
    }

    pub fn with_cache(mut self, cache: &'a RowAttributeCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_index(mut self, index: &'a AnnIndex, strategy: Strategy) -> Self {
        self.index = Some(index);
        self.strategy = strategy;
        self
    }

    pub fn with_policy(mut self, policy: OovPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn query(&self, sql: &str) -> Result<ResultSet> {
        self.execute(&crate::query::parse(sql)?)
    }

    pub fn execute(&self, ast: &QueryAst) -> Result<ResultSet> {
        if !ast.relational_variables().is_empty() {
            return self.execute_expanded(ast);
        }
        let bound = self.bind(ast)?;
        self.run(&bound)
    }

    /// Run every valid `$R.X` substitution and union the results, dropping
    /// duplicate rows. Provenance columns name the table and column chosen
    /// for each variable.
    fn execute_expanded(&self, ast: &QueryAst) -> Result<ResultSet> {
        let expansions = crate::query::expand_relational_variables(ast, self.catalog)?;
        let mut valid = Vec::new();
        for exp in &expansions {
            match self.bind(&exp.ast) {
                Ok(b) => valid.push((exp, b)),
                Err(e) if is_bind_error(&e) => {
                    log::debug!("event=skip_substitution reason=\"{e}\"")
                }
                Err(e) => return Err(e),
            }
        }
        if valid.is_empty() {
            return Err(Error::NoValidSubstitution);
        }
        let mut out = ResultSet {
            columns: ast.projections.iter().map(|p| p.header()).collect(),
            ..Default::default()
        };
        out.columns
            .extend(valid[0].0.bindings.iter().map(|(var, _)| var.clone()));
        let mut seen = HashSet::new();
        for (exp, bound) in valid {
            let rs = self.run(&bound)?;
            out.stats.udf_evaluations += rs.stats.udf_evaluations;
            out.stats.memo_hits += rs.stats.memo_hits;
            out.stats.prefiltered += rs.stats.prefiltered;
            for mut row in rs.rows {
                if seen.insert(row_key(&row)) {
                    row.extend(exp.bindings.iter().map(|(_, v)| Value::Text(v.clone())));
                    out.rows.push(row);
                }
            }
        }
        Ok(out)
    }
}

fn is_bind_error(e: &Error) -> bool {
    matches!(
        e,
        Error::UnknownColumn(_)
            | Error::UnknownTable(_)
            | Error::TypeError(_)
            | Error::UnconstrainedTokenVariable(_)
    )
}

fn row_key(row: &[Value]) -> String {
    row.iter()
        .map(|v| match v {
            Value::Text(s) => format!("t{s}"),
            Value::Number(x) => format!("n{}", x.to_bits()),
            Value::Missing => "m".into(),
        })
        .collect::<Vec<_>>()
        .join("\u{1f}")
}

#[derive(Debug, Clone)]
enum BExpr {
    Const(QVal),
    Cell {
        src: usize,
        col: usize,
    },
    RowTokens(usize),
    RelationTokens(usize),
    TokenVar(usize),
    Udf {
        udf: Udf,
        name: String,
        args: Vec<BExpr>,
    },
    Contains {
        scope: Box<BExpr>,
        var: usize,
    },
    Agg {
        agg: Aggregate,
        arg: Box<BExpr>,
    },
    Compare {
        op: CmpOp,
        left: Box<BExpr>,
        right: Box<BExpr>,
    },
    And(Box<BExpr>, Box<BExpr>),
    Or(Box<BExpr>, Box<BExpr>),
    Not(Box<BExpr>),
}

impl BExpr {
    fn uses_token_var(&self) -> bool {
        match self {
            BExpr::TokenVar(_) => true,
            BExpr::Udf { args, .. } => args.iter().any(BExpr::uses_token_var),
            BExpr::Contains { scope, .. } => scope.uses_token_var(),
            BExpr::Agg { arg, .. } | BExpr::Not(arg) => arg.uses_token_var(),
            BExpr::Compare { left, right, .. }
            | BExpr::And(left, right)
            | BExpr::Or(left, right) => left.uses_token_var() || right.uses_token_var(),
            _ => false,
        }
    }

    fn cells(&self, out: &mut Vec<(usize, usize)>) {
        match self {
            BExpr::Cell { src, col } => out.push((*src, *col)),
            BExpr::Udf { args, .. } => args.iter().for_each(|a| a.cells(out)),
            BExpr::Contains { scope, .. } => scope.cells(out),
            BExpr::Agg { arg, .. } | BExpr::Not(arg) => arg.cells(out),
            BExpr::Compare { left, right, .. }
            | BExpr::And(left, right)
            | BExpr::Or(left, right) => {
                left.cells(out);
                right.cells(out);
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum QVal {
    Missing,
    Num(f64),
    Text(String),
    Bool(bool),
}

impl QVal {
    fn from_value(v: &Value) -> Self {
        match v {
            Value::Text(s) => QVal::Text(s.clone()),
            Value::Number(x) => QVal::Num(*x),
            Value::Missing => QVal::Missing,
        }
    }

    fn into_value(self) -> Value {
        match self {
            QVal::Missing => Value::Missing,
            QVal::Num(x) => Value::Number(x),
            QVal::Text(s) => Value::Text(s),
            QVal::Bool(b) => Value::Number(if b { 1.0 } else { 0.0 }),
        }
    }

    fn truthy(&self) -> bool {
        match self {
            QVal::Bool(b) => *b,
            QVal::Num(x) => *x != 0.0,
            _ => false,
        }
    }

    fn as_num(&self) -> Option<f64> {
        match self {
            QVal::Num(x) => Some(*x),
            QVal::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            QVal::Text(s) => s.trim().parse().ok(),
            QVal::Missing => None,
        }
    }
}

fn compare(op: CmpOp, a: &QVal, b: &QVal) -> bool {
    let ord = match (a, b) {
        (QVal::Missing, _) | (_, QVal::Missing) => return false,
        (QVal::Text(x), QVal::Text(y)) => x.cmp(y),
        _ => match (a.as_num(), b.as_num()) {
            (Some(x), Some(y)) => match x.partial_cmp(&y) {
                Some(o) => o,
                None => return false,
            },
            _ => return false,
        },
    };
    match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    }
}

/// Result ordering: numbers before text, missing last.
fn value_order(a: &QVal, b: &QVal) -> Ordering {
    fn rank(v: &QVal) -> u8 {
        match v {
            QVal::Num(_) | QVal::Bool(_) => 0,
            QVal::Text(_) => 1,
            QVal::Missing => 2,
        }
    }
    match (a, b) {
        (QVal::Text(x), QVal::Text(y)) => x.cmp(y),
        _ if rank(a) == 0 && rank(b) == 0 => a.as_num().unwrap().total_cmp(&b.as_num().unwrap()),
        _ => rank(a).cmp(&rank(b)),
    }
}

struct TableSrc {
    table: usize,
    alias: String,
}

enum OrderKey {
    Projection(usize),
    Expr(BExpr),
}

/// Rows of a source whose cell in `col` must share a token with `tokens`.
struct Prefilter {
    src: usize,
    col: usize,
    tokens: HashSet<String>,
}

struct Bound {
    sources: Vec<TableSrc>,
    token_vars: Vec<String>,
    /// Scope expression of each token variable's first `contains`.
    domains: Vec<BExpr>,
    headers: Vec<String>,
    projections: Vec<BExpr>,
    predicate: Option<BExpr>,
    group_by: Vec<(usize, usize)>,
    order: Vec<(OrderKey, Direction)>,
    limit: Option<usize>,
    /// Emit one row per satisfying token binding rather than per row tuple.
    per_binding: bool,
    prefilters: Vec<Prefilter>,
}

/// Per-table token views, computed once per query.
struct TableTokens {
    cells: Vec<Vec<Vec<String>>>,
    rows: Vec<Vec<String>>,
    relation: Vec<String>,
}

fn distinct(tokens: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    tokens
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

impl TableTokens {
    fn new(table: &RelationalTable, tf: &TableTextifier) -> Self {
        let cells: Vec<Vec<Vec<String>>> = table
            .rows()
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(c, v)| tf.cell_tokens(c, v))
                    .collect()
            })
            .collect();
        let rows: Vec<Vec<String>> = cells
            .iter()
            .map(|r| r.iter().flatten().cloned().collect())
            .collect();
        let relation = distinct(rows.iter().flatten().cloned());
        TableTokens {
            cells,
            rows,
            relation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum ArgKind {
    Tokens,
    Token,
    Flag,
}

fn arg_kinds(udf: Udf, n: usize) -> Vec<ArgKind> {
    use ArgKind::*;
    match udf {
        Udf::StringPresent => vec![Tokens, Token],
        Udf::ProximityAvg | Udf::CosineDistance => vec![Tokens, Tokens],
        Udf::CombinedAvgSim => vec![Token; 4],
        Udf::AttributeSimAvg => vec![Token, Token, Token, Token, Flag],
        Udf::AnalogyQuery => vec![Token, Token, Token, Tokens, Flag],
        Udf::AnalogyCosMul => vec![Token, Token, Token, Tokens],
        Udf::AnalogySequence => vec![Token, Token, Token, Token, Token, Tokens, Flag],
        Udf::ProximityAvgForExtKb | Udf::ProximityAvgAdvForExtKb => vec![Token, Tokens],
        Udf::SemCluster => vec![Token; n],
    }
}

impl Engine<'_> {
    fn udf_model(&self, udf: Udf) -> Option<&EmbeddingModel> {
        match udf {
            Udf::ProximityAvgForExtKb | Udf::ProximityAvgAdvForExtKb => {
                self.ext_model.or(self.model)
            }
            _ => self.model,
        }
    }

    fn bind(&self, ast: &QueryAst) -> Result<Bound> {
        let mut sources = Vec::new();
        let mut token_vars: Vec<String> = Vec::new();
        for s in &ast.sources {
            match s {
                Source::Table { name, alias } => {
                    let table = self
                        .catalog
                        .position(name)
                        .ok_or_else(|| Error::UnknownTable(name.clone()))?;
                    let alias = alias.clone().unwrap_or_else(|| name.clone());
                    if sources
                        .iter()
                        .any(|t: &TableSrc| t.alias.eq_ignore_ascii_case(&alias))
                    {
                        return Err(Error::TypeError(format!("duplicate source name `{alias}`")));
                    }
                    sources.push(TableSrc { table, alias });
                }
                Source::Tokens(vars) => token_vars.extend(vars.iter().cloned()),
                Source::RelVar(r) => {
                    return Err(Error::TypeError(format!(
                        "unexpanded relational variable ${r}"
                    )))
                }
            }
        }
        if sources.is_empty() {
            return Err(Error::TypeError("FROM needs at least one table".into()));
        }
        let mut b = Binder {
            engine: self,
            sources: &sources,
            token_vars: &token_vars,
        };

        let predicate = ast
            .predicate
            .as_ref()
            .map(|p| b.expr(p, false))
            .transpose()?;
        let mut domains = Vec::new();
        for (vi, var) in token_vars.iter().enumerate() {
            let scope = predicate.as_ref().and_then(|p| {
                conjuncts(p).into_iter().find_map(|c| match c {
                    BExpr::Contains { scope, var } if *var == vi => Some((**scope).clone()),
                    _ => None,
                })
            });
            domains.push(scope.ok_or_else(|| Error::UnconstrainedTokenVariable(var.clone()))?);
        }

        let mut projections = Vec::new();
        for p in &ast.projections {
            projections.push(b.expr(&p.expr, true)?);
        }
        let headers: Vec<String> = ast.projections.iter().map(|p| p.header()).collect();
        let group_by = ast
            .group_by
            .iter()
            .map(|c| match b.column(c, false)? {
                BExpr::Cell { src, col } => Ok((src, col)),
                _ => Err(Error::TypeError(format!("cannot group by `{c}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let grouped = !group_by.is_empty();
        if grouped {
            for (p, h) in projections.iter().zip(&headers) {
                if matches!(p, BExpr::Agg { .. }) {
                    continue;
                }
                let mut cells = Vec::new();
                p.cells(&mut cells);
                if cells.iter().any(|c| !group_by.contains(c)) {
                    return Err(Error::TypeError(format!(
                        "`{h}` must be aggregated or appear in GROUP BY"
                    )));
                }
            }
        }

        let mut order = Vec::new();
        for item in &ast.order_by {
            let Expr::Column(c) = &item.expr else {
                return Err(Error::TypeError(
                    "ORDER BY takes a projection alias or a column".into(),
                ));
            };
            let by_alias = c.qualifier.is_none().then(|| {
                ast.projections.iter().position(|p| {
                    p.alias
                        .as_deref()
                        .is_some_and(|a| a.eq_ignore_ascii_case(&c.column))
                })
            });
            let by_header = || {
                headers
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case(&c.to_string()))
            };
            let key = match by_alias.flatten().or_else(by_header) {
                Some(i) => OrderKey::Projection(i),
                None => {
                    let e = b.column(c, false)?;
                    if let BExpr::Cell { src, col } = e {
                        if grouped && !group_by.contains(&(src, col)) {
                            return Err(Error::TypeError(format!(
                                "ORDER BY `{c}` must appear in GROUP BY"
                            )));
                        }
                    }
                    OrderKey::Expr(e)
                }
            };
            order.push((key, item.direction));
        }

        if ast.has_udf() && self.model.is_none() && self.ext_model.is_none() {
            return Err(Error::Config(
                "query uses UDFs but no model is loaded".into(),
            ));
        }
        let per_binding = projections.iter().any(BExpr::uses_token_var)
            || order
                .iter()
                .any(|(k, _)| matches!(k, OrderKey::Expr(e) if e.uses_token_var()));
        let prefilters = match &predicate {
            Some(p) if !self.strategy.is_exact() => self.prefilters(p)?,
            _ => Vec::new(),
        };
        Ok(Bound {
            sources,
            token_vars,
            domains,
            headers,
            projections,
            predicate,
            group_by,
            order,
            limit: ast.limit,
            per_binding,
            prefilters,
        })
    }

    /// ANN candidate sets for thresholded similarity conjuncts that compare
    /// one row column against constants. Such a conjunct can only hold for
    /// rows sharing a token with the candidate set of the constant's vector.
    fn prefilters(&self, predicate: &BExpr) -> Result<Vec<Prefilter>> {
        let Some(index) = self.index else {
            return Err(Error::Config(format!(
                "strategy {} requires an index",
                self.strategy
            )));
        };
        let mut out = Vec::new();
        for c in conjuncts(predicate) {
            let BExpr::Compare {
                op: CmpOp::Gt | CmpOp::Ge,
                left,
                right,
            } = c
            else {
                continue;
            };
            let (BExpr::Udf { udf, args, .. }, BExpr::Const(QVal::Num(_))) = (&**left, &**right)
            else {
                continue;
            };
            let Some(model) = self.udf_model(*udf) else {
                continue;
            };
            let cells: Vec<(usize, usize, usize)> = args
                .iter()
                .enumerate()
                .filter_map(|(i, a)| match a {
                    BExpr::Cell { src, col } => Some((i, *src, *col)),
                    _ => None,
                })
                .collect();
            let consts_only = |skip: usize| {
                args.iter()
                    .enumerate()
                    .all(|(i, a)| i == skip || matches!(a, BExpr::Const(QVal::Text(_))))
            };
            let [(pos, src, col)] = cells[..] else {
                continue;
            };
            if !consts_only(pos) {
                continue;
            }
            let literal = |a: &BExpr, kind| match a {
                BExpr::Const(QVal::Text(s)) => literal_tokens(s, kind, Some(model)),
                _ => Vec::new(),
            };
            let query = match udf {
                Udf::ProximityAvg | Udf::CosineDistance => {
                    let other = &args[1 - pos];
                    model
                        .mean_vector(&literal(other, ArgKind::Tokens), self.policy)
                        .ok()
                }
                Udf::SemCluster if pos == args.len() - 1 => {
                    let inputs: Vec<String> = args[..pos]
                        .iter()
                        .flat_map(|a| literal(a, ArgKind::Token))
                        .collect();
                    model.mean_vector(&inputs, OovPolicy::Error).ok()
                }
                Udf::CombinedAvgSim if pos == 0 => {
                    let inputs: Vec<String> = args[1..]
                        .iter()
                        .flat_map(|a| literal(a, ArgKind::Token))
                        .collect();
                    model.mean_vector(&inputs, OovPolicy::Error).ok()
                }
                _ => None,
            };
            let Some(q) = query.filter(|q| q.iter().any(|x| *x != 0.0)) else {
                continue;
            };
            if q.len() != model.dim() || !std::ptr::eq(model, self.model.unwrap_or(model)) {
                continue;
            }
            let tokens = match index.candidates(&q, self.strategy)? {
                Some(rows) => rows
                    .into_iter()
                    .map(|r| model.word(r as usize).to_string())
                    .collect(),
                None => continue,
            };
            out.push(Prefilter { src, col, tokens });
        }
        Ok(out)
    }

    fn run(&self, bound: &Bound) -> Result<ResultSet> {
        let tables: Vec<TableTokens> = bound
            .sources
            .iter()
            .map(|s| {
                let (t, tf) = &self.catalog.tables[s.table];
                TableTokens::new(t, tf)
            })
            .collect();
        let mut ctx = EvalCtx {
            engine: self,
            bound,
            tables,
            memo: HashMap::new(),
            stats: QueryStats::default(),
        };

        // matching environments, in nested-loop order
        let mut envs: Vec<Env> = Vec::new();
        let sizes: Vec<usize> = bound
            .sources
            .iter()
            .map(|s| self.catalog.tables[s.table].0.len())
            .collect();
        let mut rows = vec![0usize; sizes.len()];
        if sizes.iter().all(|&n| n > 0) {
            loop {
                let passes = bound.prefilters.iter().all(|p| {
                    ctx.tables[p.src].cells[rows[p.src]][p.col]
                        .iter()
                        .any(|t| p.tokens.contains(t))
                });
                if passes {
                    ctx.collect_bindings(&rows, &mut envs)?;
                } else {
                    ctx.stats.prefiltered += 1;
                }
                // odometer over the cross product, last source fastest
                let mut i = sizes.len();
                loop {
                    if i == 0 {
                        break;
                    }
                    i -= 1;
                    rows[i] += 1;
                    if rows[i] < sizes[i] {
                        break;
                    }
                    rows[i] = 0;
                    if i == 0 {
                        i = usize::MAX;
                        break;
                    }
                }
                if i == usize::MAX {
                    break;
                }
            }
        }

        // (projected values, order keys)
        let mut out: Vec<(Vec<QVal>, Vec<QVal>)> = Vec::new();
        if bound.group_by.is_empty() {
            for env in &envs {
                let vals = bound
                    .projections
                    .iter()
                    .map(|p| ctx.eval(p, env))
                    .collect::<Result<Vec<_>>>()?;
                let keys = ctx.order_keys(&vals, env)?;
                out.push((vals, keys));
            }
        } else {
            let mut groups: Vec<(Vec<QVal>, Vec<usize>)> = Vec::new();
            for (ei, env) in envs.iter().enumerate() {
                let key: Vec<QVal> = bound
                    .group_by
                    .iter()
                    .map(|&(src, col)| ctx.cell(src, col, env))
                    .collect();
                match groups.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, members)) => members.push(ei),
                    None => groups.push((key, vec![ei])),
                }
            }
            for (_, members) in &groups {
                let first = &envs[members[0]];
                let mut vals = Vec::new();
                for (p, h) in bound.projections.iter().zip(&bound.headers) {
                    vals.push(match p {
                        BExpr::Agg { agg, arg } => {
                            let xs = members
                                .iter()
                                .map(|&m| ctx.eval(arg, &envs[m]))
                                .collect::<Result<Vec<_>>>()?;
                            aggregate(*agg, xs, h)?
                        }
                        e => ctx.eval(e, first)?,
                    });
                }
                let keys = ctx.order_keys(&vals, first)?;
                out.push((vals, keys));
            }
        }

        if !bound.order.is_empty() {
            out.sort_by(|a, b| {
                for (i, (_, dir)) in bound.order.iter().enumerate() {
                    let o = value_order(&a.1[i], &b.1[i]);
                    let o = if *dir == Direction::Desc {
                        o.reverse()
                    } else {
                        o
                    };
                    if o != Ordering::Equal {
                        return o;
                    }
                }
                Ordering::Equal
            });
        }
        if let Some(n) = bound.limit {
            out.truncate(n);
        }
        Ok(ResultSet {
            columns: bound.headers.clone(),
            rows: out
                .into_iter()
                .map(|(v, _)| v.into_iter().map(QVal::into_value).collect())
                .collect(),
            stats: ctx.stats,
        })
    }
}

fn conjuncts(e: &BExpr) -> Vec<&BExpr> {
    match e {
        BExpr::And(a, b) => {
            let mut v = conjuncts(a);
            v.extend(conjuncts(b));
            v
        }
        e => vec![e],
    }
}

fn aggregate(agg: Aggregate, xs: Vec<QVal>, header: &str) -> Result<QVal> {
    let present: Vec<QVal> = xs.into_iter().filter(|x| *x != QVal::Missing).collect();
    if present.is_empty() {
        return Ok(QVal::Missing);
    }
    let numeric: Option<Vec<f64>> = present
        .iter()
        .map(|x| match x {
            QVal::Num(v) => Some(*v),
            QVal::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        })
        .collect();
    match (agg, numeric) {
        (Aggregate::Avg, Some(v)) => Ok(QVal::Num(v.iter().sum::<f64>() / v.len() as f64)),
        (Aggregate::Avg, None) => Err(Error::TypeError(format!("{header}: AVG over text"))),
        (Aggregate::Max, Some(v)) => Ok(QVal::Num(v.into_iter().fold(f64::NEG_INFINITY, f64::max))),
        (Aggregate::Min, Some(v)) => Ok(QVal::Num(v.into_iter().fold(f64::INFINITY, f64::min))),
        (Aggregate::Max | Aggregate::Min, None) => {
            if present.iter().any(|x| !matches!(x, QVal::Text(_))) {
                return Err(Error::TypeError(format!(
                    "{header}: mixed text and numbers"
                )));
            }
            let it = present.into_iter();
            Ok(if agg == Aggregate::Max {
                it.max_by(value_order)
            } else {
                it.min_by(value_order)
            }
            .expect("non-empty"))
        }
    }
}

struct Binder<'e, 'a> {
    engine: &'e Engine<'a>,
    sources: &'e [TableSrc],
    token_vars: &'e [String],
}

impl Binder<'_, '_> {
    fn source(&self, q: &Qualifier) -> Result<usize> {
        let name = q.to_string();
        self.sources
            .iter()
            .position(|s| s.alias.eq_ignore_ascii_case(&name))
            .ok_or(Error::UnknownTable(name))
    }

    fn table(&self, src: usize) -> &RelationalTable {
        &self.engine.catalog.tables[self.sources[src].table].0
    }

    /// `relation_ok`: a bare source name may denote the whole relation.
    fn column(&self, c: &ColumnRef, relation_ok: bool) -> Result<BExpr> {
        match &c.qualifier {
            Some(q) => {
                let src = self.source(q)?;
                let col = self
                    .table(src)
                    .column_index(&c.column)
                    .ok_or_else(|| Error::UnknownColumn(c.to_string()))?;
                Ok(BExpr::Cell { src, col })
            }
            None => {
                if let Some(v) = self.token_vars.iter().position(|t| *t == c.column) {
                    return Ok(BExpr::TokenVar(v));
                }
                if relation_ok {
                    if let Ok(src) = self.source(&Qualifier::Name(c.column.clone())) {
                        return Ok(BExpr::RelationTokens(src));
                    }
                }
                let hits: Vec<(usize, usize)> = (0..self.sources.len())
                    .filter_map(|s| self.table(s).column_index(&c.column).map(|col| (s, col)))
                    .collect();
                match hits[..] {
                    [(src, col)] => Ok(BExpr::Cell { src, col }),
                    [] => Err(Error::UnknownColumn(c.column.clone())),
                    _ => Err(Error::TypeError(format!("ambiguous column `{}`", c.column))),
                }
            }
        }
    }

    fn expr(&mut self, e: &Expr, projection: bool) -> Result<BExpr> {
        Ok(match e {
            Expr::Literal(Literal::Number(x)) => BExpr::Const(QVal::Num(*x)),
            Expr::Literal(Literal::Str(s)) => BExpr::Const(QVal::Text(s.clone())),
            Expr::Column(c) => self.column(c, false)?,
            Expr::RowStar(q) => BExpr::RowTokens(self.source(q)?),
            Expr::Call {
                name,
                function,
                args,
            } => match function {
                Function::Contains => {
                    let scope = match &args[0] {
                        Expr::Column(c) => self.column(c, true)?,
                        Expr::RowStar(q) => BExpr::RowTokens(self.source(q)?),
                        other => {
                            return Err(Error::TypeError(format!(
                                "contains() scope `{other}` is not a column, row or relation"
                            )))
                        }
                    };
                    let var = match &args[1] {
                        Expr::Column(ColumnRef {
                            qualifier: None,
                            column,
                        }) => self.token_vars.iter().position(|t| t == column),
                        _ => None,
                    }
                    .ok_or_else(|| {
                        Error::TypeError(format!(
                            "contains() needs a token variable, got `{}`",
                            args[1]
                        ))
                    })?;
                    BExpr::Contains {
                        scope: Box::new(scope),
                        var,
                    }
                }
                Function::Aggregate(agg) => {
                    if !projection {
                        return Err(Error::TypeError(format!(
                            "{name} is only allowed in SELECT"
                        )));
                    }
                    BExpr::Agg {
                        agg: *agg,
                        arg: Box::new(self.expr(&args[0], false)?),
                    }
                }
                Function::Udf(udf) => {
                    let bargs = args
                        .iter()
                        .map(|a| self.expr(a, false))
                        .collect::<Result<Vec<_>>>()?;
                    if matches!(udf, Udf::AttributeSimAvg) && self.engine.cache.is_none() {
                        return Err(Error::Config(format!(
                            "{name} requires a row-attribute cache"
                        )));
                    }
                    BExpr::Udf {
                        udf: *udf,
                        name: name.clone(),
                        args: bargs,
                    }
                }
            },
            Expr::Compare { op, left, right } => BExpr::Compare {
                op: *op,
                left: Box::new(self.expr(left, projection)?),
                right: Box::new(self.expr(right, projection)?),
            },
            Expr::And(a, b) => BExpr::And(
                Box::new(self.expr(a, projection)?),
                Box::new(self.expr(b, projection)?),
            ),
            Expr::Or(a, b) => BExpr::Or(
                Box::new(self.expr(a, projection)?),
                Box::new(self.expr(b, projection)?),
            ),
            Expr::Not(a) => BExpr::Not(Box::new(self.expr(a, projection)?)),
        })
    }
}

/// One candidate result row: a row index per table source and a token per
/// token variable.
#[derive(Debug, Clone)]
struct Env {
    rows: Vec<usize>,
    tokens: Vec<String>,
}

struct EvalCtx<'e, 'a> {
    engine: &'e Engine<'a>,
    bound: &'e Bound,
    tables: Vec<TableTokens>,
    memo: HashMap<(Udf, Vec<Vec<String>>), f64>,
    stats: QueryStats,
}

/// Tokens for a string constant: taken verbatim when the model knows the
/// literal, otherwise normalized like a cell (single-token positions join
/// the pieces with `_`, like key values).
fn literal_tokens(s: &str, kind: ArgKind, model: Option<&EmbeddingModel>) -> Vec<String> {
    if model.is_some_and(|m| m.contains(s)) {
        return vec![s.to_string()];
    }
    match kind {
        ArgKind::Token | ArgKind::Flag => {
            let t = key_token(s);
            if t.is_empty() {
                Vec::new()
            } else {
                vec![t]
            }
        }
        ArgKind::Tokens => {
            let n = TextNormalizer::default();
            let kept = n.tokens(s, true);
            if kept.is_empty() {
                n.tokens(s, false)
            } else {
                kept
            }
        }
    }
}

impl EvalCtx<'_, '_> {
    fn cell(&self, src: usize, col: usize, env: &Env) -> QVal {
        let table = &self.engine.catalog.tables[self.bound.sources[src].table].0;
        QVal::from_value(&table.rows()[env.rows[src]][col])
    }

    fn scope_tokens(&self, scope: &BExpr, env: &Env) -> Result<Vec<String>> {
        Ok(match scope {
            BExpr::Cell { src, col } => self.tables[*src].cells[env.rows[*src]][*col].clone(),
            BExpr::RowTokens(src) => {
                distinct(self.tables[*src].rows[env.rows[*src]].iter().cloned())
            }
            BExpr::RelationTokens(src) => self.tables[*src].relation.clone(),
            BExpr::TokenVar(v) => vec![env.tokens[*v].clone()],
            _ => {
                return Err(Error::TypeError(
                    "contains() scope must be a column, row or relation".into(),
                ))
            }
        })
    }

    /// Enumerate token-variable bindings for one row tuple and keep the
    /// satisfying ones (all of them, or the first, see `per_binding`).
    fn collect_bindings(&mut self, rows: &[usize], out: &mut Vec<Env>) -> Result<()> {
        let mut env = Env {
            rows: rows.to_vec(),
            tokens: vec![String::new(); self.bound.token_vars.len()],
        };
        self.bind_var(0, &mut env, out).map(|_| ())
    }

    /// Returns true when enumeration should stop.
    fn bind_var(&mut self, v: usize, env: &mut Env, out: &mut Vec<Env>) -> Result<bool> {
        if v == self.bound.token_vars.len() {
            let ok = match &self.bound.predicate {
                Some(p) => self.eval(p, env)?.truthy(),
                None => true,
            };
            if ok {
                out.push(env.clone());
                return Ok(!self.bound.per_binding);
            }
            return Ok(false);
        }
        for t in self.scope_tokens(&self.bound.domains[v], env)? {
            env.tokens[v] = t;
            if self.bind_var(v + 1, env, out)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn order_keys(&mut self, vals: &[QVal], env: &Env) -> Result<Vec<QVal>> {
        let bound = self.bound;
        bound
            .order
            .iter()
            .map(|(k, _)| match k {
                OrderKey::Projection(i) => Ok(vals[*i].clone()),
                OrderKey::Expr(e) => self.eval(e, env),
            })
            .collect()
    }

    fn eval(&mut self, e: &BExpr, env: &Env) -> Result<QVal> {
        Ok(match e {
            BExpr::Const(v) => v.clone(),
            BExpr::Cell { src, col } => self.cell(*src, *col, env),
            BExpr::TokenVar(v) => QVal::Text(env.tokens[*v].clone()),
            BExpr::RowTokens(_) | BExpr::RelationTokens(_) => {
                return Err(Error::TypeError(
                    "a row or relation is only valid inside contains() or a UDF".into(),
                ))
            }
            BExpr::Contains { scope, var } => {
                let tokens = self.scope_tokens(scope, env)?;
                QVal::Bool(tokens.contains(&env.tokens[*var]))
            }
            BExpr::Agg { .. } => return Err(Error::TypeError("aggregate outside GROUP BY".into())),
            BExpr::Compare { op, left, right } => {
                let (a, b) = (self.eval(left, env)?, self.eval(right, env)?);
                QVal::Bool(compare(*op, &a, &b))
            }
            BExpr::And(a, b) => {
                QVal::Bool(self.eval(a, env)?.truthy() && self.eval(b, env)?.truthy())
            }
            BExpr::Or(a, b) => {
                QVal::Bool(self.eval(a, env)?.truthy() || self.eval(b, env)?.truthy())
            }
            BExpr::Not(a) => QVal::Bool(!self.eval(a, env)?.truthy()),
            BExpr::Udf { udf, name, args } => {
                let model = self.engine.udf_model(*udf);
                let kinds = arg_kinds(*udf, args.len());
                let mut resolved = Vec::with_capacity(args.len());
                for (a, &kind) in args.iter().zip(&kinds) {
                    let tokens = self
                        .arg_tokens(a, kind, model, env)
                        .map_err(|e| self.wrap(name, env, e))?;
                    resolved.push(tokens);
                }
                let key = (*udf, resolved);
                if let Some(&x) = self.memo.get(&key) {
                    self.stats.memo_hits += 1;
                    return Ok(QVal::Num(x));
                }
                let x = self
                    .call(*udf, &key.1, model)
                    .map_err(|e| self.wrap(name, env, e))?;
                self.stats.udf_evaluations += 1;
                self.memo.insert(key, x);
                QVal::Num(x)
            }
        })
    }

    fn wrap(&self, function: &str, env: &Env, source: Error) -> Error {
        let row = self
            .bound
            .sources
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let t = &self.engine.catalog.tables[s.table].0;
                let r = env.rows[i];
                let id = t.row_key(r).unwrap_or_else(|| format!("#{r}"));
                format!("{}={id}", s.alias)
            })
            .collect::<Vec<_>>()
            .join(", ");
        Error::Udf {
            function: function.to_string(),
            row,
            source: Box::new(source),
        }
    }

    fn arg_tokens(
        &self,
        a: &BExpr,
        kind: ArgKind,
        model: Option<&EmbeddingModel>,
        env: &Env,
    ) -> Result<Vec<String>> {
        let tokens = match a {
            BExpr::Const(QVal::Text(s)) => literal_tokens(s, kind, model),
            BExpr::Const(QVal::Num(x)) => vec![format!("{x}")],
            BExpr::Cell { .. }
            | BExpr::RowTokens(_)
            | BExpr::RelationTokens(_)
            | BExpr::TokenVar(_) => {
                if let (ArgKind::Flag, BExpr::Cell { src, col }) = (kind, a) {
                    vec![match self.cell(*src, *col, env) {
                        QVal::Num(x) => format!("{x}"),
                        other => format!("{other:?}"),
                    }]
                } else {
                    self.scope_tokens(a, env)?
                }
            }
            other => {
                return Err(Error::TypeError(format!(
                    "unsupported UDF argument {other:?}"
                )))
            }
        };
        if matches!(kind, ArgKind::Token | ArgKind::Flag) && tokens.len() != 1 {
            return Err(Error::TypeError(format!(
                "expected a single token, got [{}]",
                tokens.join(" ")
            )));
        }
        Ok(tokens)
    }

    fn call(&self, udf: Udf, args: &[Vec<String>], model: Option<&EmbeddingModel>) -> Result<f64> {
        let policy = self.engine.policy;
        let flag = |s: &str| -> Result<i64> {
            let x: f64 = s
                .parse()
                .map_err(|_| Error::TypeError(format!("flag `{s}` is not an integer")))?;
            if x.fract() != 0.0 {
                return Err(Error::InvalidFlag(x as i64));
            }
            Ok(x as i64)
        };
        let one = |i: usize| args[i][0].as_str();
        if udf == Udf::StringPresent {
            return Ok(if udf::string_present(&args[0], one(1)) {
                1.0
            } else {
                0.0
            });
        }
        let m = model.ok_or_else(|| Error::Config("no model loaded".into()))?;
        match udf {
            Udf::StringPresent => unreachable!("handled above"),
            Udf::ProximityAvg | Udf::CosineDistance => {
                udf::proximity_avg(&args[0], &args[1], m, policy)
            }
            Udf::CombinedAvgSim => udf::combined_avg_sim(one(0), one(1), one(2), one(3), m),
            Udf::AttributeSimAvg => {
                let cache = self.engine.cache.ok_or_else(|| {
                    Error::Config("attributeSimAvg requires a row-attribute cache".into())
                })?;
                let f = AttributeFlag::from_i64(flag(one(4))?)?;
                udf::attribute_sim_avg([one(0), one(1), one(2)], one(3), f, cache)
            }
            Udf::AnalogyQuery => {
                let method = AnalogyMethod::from_flag(flag(one(4))?)?;
                udf::analogy_query(one(0), one(1), one(2), &args[3], method, m, policy)
            }
            Udf::AnalogyCosMul => udf::analogy_query(
                one(0),
                one(1),
                one(2),
                &args[3],
                AnalogyMethod::cosmul(),
                m,
                policy,
            ),
            Udf::AnalogySequence => {
                let method = AnalogyMethod::from_flag(flag(one(6))?)?;
                udf::analogy_sequence(
                    one(0),
                    one(1),
                    one(2),
                    one(3),
                    one(4),
                    &args[5],
                    method,
                    m,
                    policy,
                )
            }
            Udf::ProximityAvgForExtKb => udf::proximity_avg_for_ext_kb(one(0), &args[1], m),
            Udf::ProximityAvgAdvForExtKb => udf::proximity_avg_adv_for_ext_kb(one(0), &args[1], m),
            Udf::SemCluster => {
                let n = args.len();
                let inputs: Vec<&str> = (0..n - 1).map(one).collect();
                udf::semantic_cluster_score(&inputs, one(n - 1), m)
            }
        }
    }
}
