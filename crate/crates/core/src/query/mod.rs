//! The CI-SQL dialect: a single-SELECT SQL subset with cognitive UDFs,
//! `Token` variables with `contains()`, and `$R.X` relational variables.
//! The grammar is documented in `docs/dialect.md`.

pub mod ast;
pub mod exec;
pub mod lexer;
pub mod output;
pub mod parser;
pub mod registry;

use std::collections::BTreeSet;

use crate::error::{Error, Result};

pub use ast::{Expr, QueryAst};
pub use exec::{Catalog, Engine, QueryStats, ResultSet};
pub use output::OutputFormat;
pub use parser::parse;

use ast::{ColumnRef, Qualifier, Source};

/// One concrete statement produced from a statement with `$R` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    /// `("$R", table)` and `("$R.X", column)` pairs, in variable order.
    pub bindings: Vec<(String, String)>,
    pub ast: QueryAst,
}

/// Names after `$R.` that are not a column of any catalog table.
fn column_variables(ast: &QueryAst, relvar: &str, catalog: &Catalog) -> Vec<String> {
    let mut vars = BTreeSet::new();
    for e in ast.expressions() {
        e.visit(&mut |x| {
            if let Expr::Column(ColumnRef {
                qualifier: Some(Qualifier::RelVar(r)),
                column,
            }) = x
            {
                if r == relvar {
                    vars.insert(column.clone());
                }
            }
        });
    }
    for c in &ast.group_by {
        if c.qualifier == Some(Qualifier::RelVar(relvar.to_string())) {
            vars.insert(c.column.clone());
        }
    }
    vars.into_iter()
        .filter(|v| {
            !catalog
                .names()
                .iter()
                .any(|t| catalog.get(t).is_some_and(|t| t.column_index(v).is_some()))
        })
        .collect()
}

fn substitute(e: &Expr, relvar: &str, alias: &str, columns: &[(String, String)]) -> Expr {
    let rename = |c: &ColumnRef| -> ColumnRef {
        match &c.qualifier {
            Some(Qualifier::RelVar(r)) if r == relvar => ColumnRef {
                qualifier: Some(Qualifier::Name(alias.to_string())),
                column: columns
                    .iter()
                    .find(|(v, _)| *v == c.column)
                    .map_or_else(|| c.column.clone(), |(_, col)| col.clone()),
            },
            _ => c.clone(),
        }
    };
    match e {
        Expr::Column(c) => Expr::Column(rename(c)),
        Expr::RowStar(Qualifier::RelVar(r)) if r == relvar => {
            Expr::RowStar(Qualifier::Name(alias.to_string()))
        }
        Expr::Call {
            name,
            function,
            args,
        } => Expr::Call {
            name: name.clone(),
            function: *function,
            args: args
                .iter()
                .map(|a| substitute(a, relvar, alias, columns))
                .collect(),
        },
        Expr::Compare { op, left, right } => Expr::Compare {
            op: *op,
            left: Box::new(substitute(left, relvar, alias, columns)),
            right: Box::new(substitute(right, relvar, alias, columns)),
        },
        Expr::And(a, b) => Expr::And(
            Box::new(substitute(a, relvar, alias, columns)),
            Box::new(substitute(b, relvar, alias, columns)),
        ),
        Expr::Or(a, b) => Expr::Or(
            Box::new(substitute(a, relvar, alias, columns)),
            Box::new(substitute(b, relvar, alias, columns)),
        ),
        Expr::Not(a) => Expr::Not(Box::new(substitute(a, relvar, alias, columns))),
        other => other.clone(),
    }
}

/// Every substitution of catalog tables for `$R` variables and table
/// columns for their column variables, in catalog and schema order. In
/// `$R.X`, `X` is a column variable unless some catalog table has a column
/// of that name, in which case it names that column. Substitutions are not type-checked here; the executor skips those
/// that fail to bind.
pub fn expand_relational_variables(ast: &QueryAst, catalog: &Catalog) -> Result<Vec<Expansion>> {
    if catalog.is_empty() {
        return Err(Error::NoValidSubstitution);
    }
    let mut out = vec![Expansion {
        bindings: Vec::new(),
        ast: ast.clone(),
    }];
    for relvar in ast.relational_variables() {
        let col_vars = column_variables(ast, relvar, catalog);
        let alias = format!("${relvar}");
        let mut next = Vec::new();
        for partial in &out {
            for table_name in catalog.names() {
                let table = catalog.get(table_name).expect("listed table");
                let names: Vec<&str> = table.columns().iter().map(|c| c.name.as_str()).collect();
                if names.is_empty() && !col_vars.is_empty() {
                    continue;
                }
                // odometer over column choices, one per column variable
                let mut choice = vec![0usize; col_vars.len()];
                loop {
                    let columns: Vec<(String, String)> = col_vars
                        .iter()
                        .zip(&choice)
                        .map(|(v, &i)| (v.clone(), names[i].to_string()))
                        .collect();
                    let mut a = partial.ast.clone();
                    for s in &mut a.sources {
                        if *s == Source::RelVar(relvar.to_string()) {
                            *s = Source::Table {
                                name: table_name.to_string(),
                                alias: Some(alias.clone()),
                            };
                        }
                    }
                    for p in &mut a.projections {
                        p.alias.get_or_insert_with(|| p.expr.to_string());
                        p.expr = substitute(&p.expr, relvar, &alias, &columns);
                    }
                    a.predicate = a
                        .predicate
                        .map(|e| substitute(&e, relvar, &alias, &columns));
                    for o in &mut a.order_by {
                        o.expr = substitute(&o.expr, relvar, &alias, &columns);
                    }
                    for g in &mut a.group_by {
                        if let Expr::Column(c) =
                            substitute(&Expr::Column(g.clone()), relvar, &alias, &columns)
                        {
                            *g = c;
                        }
                    }
                    let mut bindings = partial.bindings.clone();
                    bindings.push((alias.clone(), table_name.to_string()));
                    bindings.extend(
                        columns
                            .iter()
                            .map(|(v, c)| (format!("{alias}.{v}"), c.clone())),
                    );
                    next.push(Expansion { bindings, ast: a });

                    let mut i = choice.len();
                    let mut done = true;
                    while i > 0 {
                        i -= 1;
                        choice[i] += 1;
                        if choice[i] < names.len() {
                            done = false;
                            break;
                        }
                        choice[i] = 0;
                    }
                    if done {
                        break;
                    }
                }
            }
        }
        out = next;
    }
    Ok(out)
}
