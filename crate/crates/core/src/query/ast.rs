use std::fmt;

use crate::query::registry::{Aggregate, Function};

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Str(String),
}

/// What stands before the dot of a column reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Qualifier {
    /// Table name or alias.
    Name(String),
    /// Relational variable `$R`.
    RelVar(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRef {
    pub qualifier: Option<Qualifier>,
    /// Column name, or a column variable when the qualifier is a `$R`.
    pub column: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Literal),
    /// A column, or (unqualified) a token variable or whole relation.
    Column(ColumnRef),
    /// `T.*`: every token of the current row of `T`.
    RowStar(Qualifier),
    Call {
        name: String,
        function: Function,
        args: Vec<Expr>,
    },
    Compare {
        op: CmpOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

impl Expr {
    pub fn is_aggregate(&self) -> bool {
        matches!(
            self,
            Expr::Call {
                function: Function::Aggregate(_),
                ..
            }
        )
    }

    pub fn aggregate(&self) -> Option<(Aggregate, &Expr)> {
        match self {
            Expr::Call {
                function: Function::Aggregate(a),
                args,
                ..
            } => Some((*a, &args[0])),
            _ => None,
        }
    }

    /// Pre-order walk.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Call { args, .. } => args.iter().for_each(|a| a.visit(f)),
            Expr::Compare { left, right, .. } | Expr::And(left, right) | Expr::Or(left, right) => {
                left.visit(f);
                right.visit(f);
            }
            Expr::Not(e) => e.visit(f),
            _ => {}
        }
    }

    /// Top-level AND conjuncts.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::And(a, b) => {
                let mut v = a.conjuncts();
                v.extend(b.conjuncts());
                v
            }
            e => vec![e],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub expr: Expr,
    pub alias: Option<String>,
}

impl Projection {
    /// Result column header: the alias, else the expression text.
    pub fn header(&self) -> String {
        self.alias.clone().unwrap_or_else(|| self.expr.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Table {
        name: String,
        alias: Option<String>,
    },
    /// `Token e1, e2`.
    Tokens(Vec<String>),
    /// `$R`: ranges over every base table.
    RelVar(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub expr: Expr,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    pub projections: Vec<Projection>,
    pub sources: Vec<Source>,
    pub predicate: Option<Expr>,
    pub group_by: Vec<ColumnRef>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<usize>,
}

impl QueryAst {
    pub fn token_variables(&self) -> Vec<&str> {
        self.sources
            .iter()
            .flat_map(|s| match s {
                Source::Tokens(v) => v.iter().map(String::as_str).collect(),
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn relational_variables(&self) -> Vec<&str> {
        self.sources
            .iter()
            .filter_map(|s| match s {
                Source::RelVar(r) => Some(r.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Every expression of the statement, in clause order.
    pub fn expressions(&self) -> Vec<&Expr> {
        let mut out: Vec<&Expr> = self.projections.iter().map(|p| &p.expr).collect();
        out.extend(self.predicate.iter());
        out.extend(self.order_by.iter().map(|o| &o.expr));
        out
    }

    pub fn has_udf(&self) -> bool {
        let mut found = false;
        for e in self.expressions() {
            e.visit(&mut |x| {
                if let Expr::Call {
                    function: Function::Udf(_),
                    ..
                } = x
                {
                    found = true;
                }
            });
        }
        found
    }
}

impl fmt::Display for Qualifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Qualifier::Name(n) => f.write_str(n),
            Qualifier::RelVar(r) => write!(f, "${r}"),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(Literal::Number(x)) => write!(f, "{x}"),
            Expr::Literal(Literal::Str(s)) => write!(f, "'{}'", s.replace('\'', "''")),
            Expr::Column(c) => write!(f, "{c}"),
            Expr::RowStar(q) => write!(f, "{q}.*"),
            Expr::Call { name, args, .. } => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Compare { op, left, right } => write!(f, "{left} {op} {right}"),
            Expr::And(a, b) => write!(f, "({a} AND {b})"),
            Expr::Or(a, b) => write!(f, "({a} OR {b})"),
            Expr::Not(e) => write!(f, "NOT {e}"),
        }
    }
}
