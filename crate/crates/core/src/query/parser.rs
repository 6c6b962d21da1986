use crate::error::{Error, Result};
use crate::query::ast::{
    CmpOp, ColumnRef, Direction, Expr, Literal, OrderItem, Projection, Qualifier, QueryAst, Source,
};
use crate::query::lexer::{syntax, tokenize, Spanned, Tok};
use crate::query::registry::{lookup, Function};

const KEYWORDS: &[&str] = &[
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "AS", "GROUP", "BY", "ORDER", "ASC", "DESC",
    "LIMIT", "TOKEN",
];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.column)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        let (l, c) = self.here();
        syntax(l, c, message)
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.err(format!("expected {kw}, found {}", describe(self.peek()))))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.err(format!("expected {what}, found {}", describe(self.peek()))))
        }
    }

    /// A non-keyword identifier.
    fn name(&mut self, what: &str) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                self.next();
                Ok(s)
            }
            other => Err(self.err(format!("expected {what}, found {}", describe(&other)))),
        }
    }

    fn optional_alias(&mut self) -> Result<Option<String>> {
        if self.eat_keyword("AS") {
            return self.name("alias").map(Some);
        }
        match self.peek() {
            Tok::Ident(s) if !is_keyword(s) => self.name("alias").map(Some),
            _ => Ok(None),
        }
    }

    fn query(&mut self) -> Result<QueryAst> {
        self.expect_keyword("SELECT")?;
        let mut projections = vec![self.projection()?];
        while self.eat(&Tok::Comma) {
            projections.push(self.projection()?);
        }
        self.expect_keyword("FROM")?;
        let sources = self.sources()?;
        let predicate = if self.eat_keyword("WHERE") {
            Some(self.expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_keyword("GROUP") {
            self.expect_keyword("BY")?;
            loop {
                match self.primary()? {
                    Expr::Column(c) => group_by.push(c),
                    other => return Err(self.err(format!("GROUP BY takes columns, not `{other}`"))),
                }
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let mut order_by = Vec::new();
        if self.eat_keyword("ORDER") {
            self.expect_keyword("BY")?;
            loop {
                let (line, column) = self.here();
                let expr = self.primary()?;
                if !matches!(expr, Expr::Column(_)) {
                    return Err(syntax(
                        line,
                        column,
                        "ORDER BY takes a projection alias or a column",
                    ));
                }
                let direction = if self.eat_keyword("DESC") {
                    Direction::Desc
                } else {
                    self.eat_keyword("ASC");
                    Direction::Asc
                };
                order_by.push(OrderItem { expr, direction });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let limit = if self.eat_keyword("LIMIT") {
            match self.next() {
                Tok::Number(x) if x >= 0.0 && x.fract() == 0.0 => Some(x as usize),
                _ => {
                    self.pos -= 1;
                    return Err(self.err("LIMIT takes a non-negative integer"));
                }
            }
        } else {
            None
        };
        self.eat(&Tok::Semicolon);
        if *self.peek() != Tok::Eof {
            return Err(self.err(format!("unexpected {}", describe(self.peek()))));
        }
        Ok(QueryAst {
            projections,
            sources,
            predicate,
            group_by,
            order_by,
            limit,
        })
    }

    fn projection(&mut self) -> Result<Projection> {
        let expr = self.expr()?;
        let alias = self.optional_alias()?;
        Ok(Projection { expr, alias })
    }

    fn sources(&mut self) -> Result<Vec<Source>> {
        let mut sources = Vec::new();
        loop {
            if self.eat_keyword("TOKEN") {
                let mut vars = vec![self.name("token variable")?];
                // `Token e1, e2`: following bare names are further variables
                while *self.peek() == Tok::Comma
                    && matches!(self.peek_at(1), Tok::Ident(s) if !is_keyword(s))
                    && !matches!(self.peek_at(2), Tok::Ident(s) if !is_keyword(s))
                {
                    self.next();
                    vars.push(self.name("token variable")?);
                }
                sources.push(Source::Tokens(vars));
            } else if let Tok::RelVar(r) = self.peek().clone() {
                self.next();
                sources.push(Source::RelVar(r));
            } else {
                let name = self.name("table name")?;
                let alias = self.optional_alias()?;
                sources.push(Source::Table { name, alias });
            }
            if !self.eat(&Tok::Comma) {
                return Ok(sources);
            }
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut left = self.and_expr()?;
        while self.eat_keyword("OR") {
            left = Expr::Or(Box::new(left), Box::new(self.and_expr()?));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr> {
        let mut left = self.not_expr()?;
        while self.eat_keyword("AND") {
            left = Expr::And(Box::new(left), Box::new(self.not_expr()?));
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr> {
        if self.eat_keyword("NOT") {
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr> {
        let left = self.primary()?;
        let op = match self.peek() {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Gt => CmpOp::Gt,
            Tok::Le => CmpOp::Le,
            Tok::Ge => CmpOp::Ge,
            _ => return Ok(left),
        };
        self.next();
        let right = self.primary()?;
        Ok(Expr::Compare {
            op,
            left: Box::new(left),
            right: Box::new(right),
        })
    }

    fn primary(&mut self) -> Result<Expr> {
        let (line, column) = self.here();
        match self.next() {
            Tok::Number(x) => Ok(Expr::Literal(Literal::Number(x))),
            Tok::Minus => match self.next() {
                Tok::Number(x) => Ok(Expr::Literal(Literal::Number(-x))),
                _ => Err(syntax(line, column, "`-` must precede a number")),
            },
            Tok::Str(s) => Ok(Expr::Literal(Literal::Str(s))),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::RelVar(r) => self.after_qualifier(Qualifier::RelVar(r)),
            Tok::Ident(name) if !is_keyword(&name) => {
                if *self.peek() == Tok::LParen {
                    self.next();
                    return self.call(name, line, column);
                }
                if *self.peek() == Tok::Dot {
                    return self.after_qualifier(Qualifier::Name(name));
                }
                Ok(Expr::Column(ColumnRef {
                    qualifier: None,
                    column: name,
                }))
            }
            other => Err(syntax(
                line,
                column,
                format!("expected an expression, found {}", describe(&other)),
            )),
        }
    }

    fn after_qualifier(&mut self, q: Qualifier) -> Result<Expr> {
        if !self.eat(&Tok::Dot) {
            return match q {
                // a bare `$R` names a whole relation
                Qualifier::RelVar(r) => Ok(Expr::Column(ColumnRef {
                    qualifier: None,
                    column: format!("${r}"),
                })),
                Qualifier::Name(_) => unreachable!("caller checked for a dot"),
            };
        }
        if self.eat(&Tok::Star) {
            return Ok(Expr::RowStar(q));
        }
        let column = self.name("column name")?;
        Ok(Expr::Column(ColumnRef {
            qualifier: Some(q),
            column,
        }))
    }

    fn call(&mut self, name: String, line: usize, column: usize) -> Result<Expr> {
        let spec = lookup(&name).ok_or_else(|| Error::UnknownFunction(name.clone()))?;
        let mut args = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                args.push(self.expr()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma, "`,` or `)`")?;
            }
        }
        if args.len() < spec.min_args || args.len() > spec.max_args {
            let expected = if spec.min_args == spec.max_args {
                spec.min_args.to_string()
            } else {
                format!("at least {}", spec.min_args)
            };
            return Err(syntax(
                line,
                column,
                format!(
                    "{} takes {expected} arguments, got {}",
                    spec.name,
                    args.len()
                ),
            ));
        }
        Ok(Expr::Call {
            name,
            function: spec.function,
            args,
        })
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::RelVar(s) => format!("`${s}`"),
        Tok::Number(x) => format!("number {x}"),
        Tok::Str(s) => format!("string '{s}'"),
        Tok::Eof => "end of input".into(),
        other => format!("{other:?}"),
    }
}

/// Parse one CI-SQL statement. Function names are resolved against the
/// registry here; tables and columns are resolved at execution.
pub fn parse(sql: &str) -> Result<QueryAst> {
    let toks = tokenize(sql)?;
    let mut p = Parser { toks, pos: 0 };
    let ast = p.query()?;
    validate(&ast)?;
    Ok(ast)
}

fn validate(ast: &QueryAst) -> Result<()> {
    let misplaced =
        |clause: &str, what: &str| Error::TypeError(format!("{what} is not allowed in {clause}"));
    let has_aggregate = ast.projections.iter().any(|p| {
        let mut found = false;
        p.expr.visit(&mut |e| found |= e.is_aggregate());
        found
    });
    if has_aggregate && ast.group_by.is_empty() {
        return Err(Error::TypeError("aggregates require GROUP BY".into()));
    }
    for p in &ast.projections {
        let mut nested = false;
        let mut contains = false;
        p.expr.visit(&mut |e| {
            if let Expr::Call { function, args, .. } = e {
                contains |= *function == Function::Contains;
                nested |= args.iter().any(|a| {
                    let mut f = false;
                    a.visit(&mut |x| f |= x.is_aggregate());
                    f
                });
            }
        });
        if nested {
            return Err(misplaced("an aggregate argument", "an aggregate"));
        }
        if contains {
            return Err(misplaced("SELECT", "contains()"));
        }
    }
    if let Some(pred) = &ast.predicate {
        let mut agg = false;
        pred.visit(&mut |e| agg |= e.is_aggregate());
        if agg {
            return Err(misplaced("WHERE", "an aggregate"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::registry::Udf;

    #[test]
    fn similarity_figure_parses() {
        let ast = parse(
            "SELECT X.custID, Y.custID, similarityUDF(X.Items, Y.Items) AS similarity\n\
             FROM sales X, sales Y\n\
             WHERE similarityUDF(X.Items, Y.Items) > 0.5\n\
             ORDER BY similarity DESC",
        )
        .unwrap();
        assert_eq!(ast.sources.len(), 2);
        assert_eq!(ast.projections[2].alias.as_deref(), Some("similarity"));
        assert!(matches!(
            &ast.projections[2].expr,
            Expr::Call {
                function: Function::Udf(Udf::ProximityAvg),
                ..
            }
        ));
        assert_eq!(ast.order_by[0].direction, Direction::Desc);
    }

    #[test]
    fn token_variable_figure_parses() {
        let ast = parse(
            "SELECT EMP.Name, EMP.Salary, DEPT.Name FROM EMP, DEPT, Token e1, e2 \
             WHERE contains(EMP.Address, e1) AND contains(DEPT.*, e2) AND cosineDistance(e1, e2) > 0.75",
        )
        .unwrap();
        assert_eq!(ast.token_variables(), vec!["e1", "e2"]);
        assert_eq!(ast.predicate.unwrap().conjuncts().len(), 3);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse("SELECT"),
            Err(Error::Syntax {
                line: 1,
                column: 7,
                ..
            })
        ));
        assert!(matches!(
            parse("SELECT fooUDF(a) FROM t"),
            Err(Error::UnknownFunction(_))
        ));
        assert!(matches!(
            parse("SELECT proximityAvg(a) FROM t"),
            Err(Error::Syntax { .. })
        ));
        assert!(matches!(
            parse("SELECT MAX(a) FROM t"),
            Err(Error::TypeError(_))
        ));
        assert!(parse("SELECT a FROM t ORDER BY 1").is_err());
    }

    #[test]
    fn relational_variable_and_limit() {
        let ast =
            parse("SELECT $R.X FROM $R WHERE stringPresent($R.X, 'cat') = 1 LIMIT 3;").unwrap();
        assert_eq!(ast.relational_variables(), vec!["R"]);
        assert_eq!(ast.limit, Some(3));
    }

    #[test]
    fn display_round_trips() {
        let sql = "SELECT X.Category, MAX(X.Amount) FROM sales X WHERE similarityUDF('Merchant_Y', X.Merchant) > 0.5 GROUP BY X.Category";
        let ast = parse(sql).unwrap();
        assert_eq!(ast.projections[1].header(), "MAX(X.Amount)");
        let again = parse(&format!(
            "SELECT {} FROM sales X",
            ast.predicate.as_ref().unwrap()
        ))
        .unwrap();
        assert_eq!(again.projections[0].expr, ast.predicate.unwrap());
    }
}
