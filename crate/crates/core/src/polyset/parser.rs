use num_bigint::BigInt;

use super::{Monomial, Polynomial, PolysetError, ProblemInstance};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(BigInt),
    Plus,
    Minus,
    Star,
    Caret,
    Slash,
    Dot,
    Other(char),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(i) => format!("integer `{i}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Caret => "`^`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Other(c) => format!("`{c}`"),
        }
    }
}

/// (token, 1-based column)
type Spanned = (Tok, usize);

fn lex(line: &str) -> Vec<Spanned> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            out.push((Tok::Int(digits.parse().expect("ascii digits")), col));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
            continue;
        }
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '^' => Tok::Caret,
            '/' => Tok::Slash,
            '.' => Tok::Dot,
            other => Tok::Other(other),
        };
        out.push((tok, col));
        i += 1;
    }
    out
}

/// Variable table: either fixed by a header or grown on first occurrence.
struct Vars {
    names: Vec<String>,
    fixed: bool,
}

impl Vars {
    fn resolve(&mut self, name: &str, line: usize) -> Result<usize, PolysetError> {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return Ok(i);
        }
        if self.fixed {
            return Err(PolysetError::UnknownVariable {
                line,
                name: name.to_string(),
            });
        }
        self.names.push(name.to_string());
        Ok(self.names.len() - 1)
    }
}

/// A term before the variable count is known: coefficient and (var, exp) factors.
type RawTerm = (BigInt, Vec<(usize, u32)>);

struct LineParser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    line: usize,
    line_len: usize,
    last_line: bool,
    vars: &'a mut Vars,
}

impl LineParser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn error(&self, expected: &str) -> PolysetError {
        let (found, column) = match self.toks.get(self.pos) {
            Some((t, c)) => (t.describe(), *c),
            None if self.last_line => ("end of input".to_string(), self.line_len + 1),
            None => ("end of line".to_string(), self.line_len + 1),
        };
        PolysetError::Syntax {
            line: self.line,
            column,
            expected: expected.to_string(),
            found,
        }
    }

    fn polynomial(&mut self) -> Result<Vec<RawTerm>, PolysetError> {
        let mut terms = Vec::new();
        let mut negative = false;
        if self.peek() == Some(&Tok::Minus) {
            negative = true;
            self.pos += 1;
        }
        loop {
            let (mut coeff, factors) = self.term()?;
            if negative {
                coeff = -coeff;
            }
            terms.push((coeff, factors));
            match self.peek() {
                None => return Ok(terms),
                Some(Tok::Plus) => negative = false,
                Some(Tok::Minus) => negative = true,
                Some(_) => return Err(self.error("`+`, `-` or end of line")),
            }
            self.pos += 1;
        }
    }

    fn term(&mut self) -> Result<RawTerm, PolysetError> {
        match self.peek() {
            Some(Tok::Int(i)) => {
                let coeff = i.clone();
                self.pos += 1;
                match self.peek() {
                    Some(Tok::Star) => {
                        self.pos += 1;
                        Ok((coeff, self.factors()?))
                    }
                    Some(Tok::Slash) | Some(Tok::Dot) => {
                        Err(PolysetError::RationalCoefficient { line: self.line })
                    }
                    _ => Ok((coeff, Vec::new())),
                }
            }
            Some(Tok::Ident(_)) => Ok((BigInt::from(1), self.factors()?)),
            _ => Err(self.error("a term (integer or variable)")),
        }
    }

    fn factors(&mut self) -> Result<Vec<(usize, u32)>, PolysetError> {
        let mut out = vec![self.factor()?];
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            out.push(self.factor()?);
        }
        Ok(out)
    }

    fn factor(&mut self) -> Result<(usize, u32), PolysetError> {
        let name = match self.peek() {
            Some(Tok::Ident(name)) => name.clone(),
            _ => return Err(self.error("a variable")),
        };
        let var = self.vars.resolve(&name, self.line)?;
        self.pos += 1;
        if self.peek() != Some(&Tok::Caret) {
            return Ok((var, 1));
        }
        self.pos += 1;
        match self.peek() {
            Some(Tok::Minus) => Err(PolysetError::NegativeExponent { line: self.line }),
            Some(Tok::Int(e)) => {
                let exp = u32::try_from(e).map_err(|_| self.error("an exponent below 2^32"))?;
                self.pos += 1;
                Ok((var, exp))
            }
            _ => Err(self.error("an integer exponent")),
        }
    }
}

fn parse_header(body: &str, line: usize) -> Result<Vec<String>, PolysetError> {
    let toks = lex(body);
    let mut names = Vec::new();
    let mut expect_ident = true;
    let body_len = body.chars().count();
    for (tok, col) in &toks {
        match (expect_ident, tok) {
            (true, Tok::Ident(name)) => {
                if names.contains(name) {
                    return Err(PolysetError::DuplicateVariable(name.clone()));
                }
                names.push(name.clone());
            }
            (false, Tok::Other(',')) => {}
            (want_ident, tok) => {
                return Err(PolysetError::Syntax {
                    line,
                    column: col + 5,
                    expected: if want_ident { "a variable name" } else { "`,`" }.into(),
                    found: tok.describe(),
                })
            }
        }
        expect_ident = !expect_ident;
    }
    if expect_ident {
        return Err(PolysetError::Syntax {
            line,
            column: body_len + 6,
            expected: "a variable name".into(),
            found: "end of line".into(),
        });
    }
    Ok(names)
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("")
}

/// Parses a problem file: an optional `vars:` header followed by one
/// polynomial per nonblank line. Without a header, variables are numbered
/// in order of first occurrence.
pub fn parse_problem(text: &str) -> Result<ProblemInstance, PolysetError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !strip_comment(l).trim().is_empty())
        .collect();

    let mut vars = Vars {
        names: Vec::new(),
        fixed: false,
    };
    let mut body = &lines[..];
    if let Some((line_no, first)) = lines.first() {
        let trimmed = strip_comment(first).trim_start();
        if let Some(rest) = trimmed.strip_prefix("vars:") {
            vars.names = parse_header(rest, *line_no)?;
            vars.fixed = true;
            body = &lines[1..];
        }
    }
    if body.is_empty() {
        return Err(PolysetError::EmptyProblem);
    }

    let mut raw_polys = Vec::with_capacity(body.len());
    for (k, (line_no, text)) in body.iter().enumerate() {
        let mut parser = LineParser {
            toks: lex(text),
            pos: 0,
            line: *line_no,
            line_len: strip_comment(text).trim_end().chars().count(),
            last_line: k + 1 == body.len(),
            vars: &mut vars,
        };
        raw_polys.push((*line_no, parser.polynomial()?));
    }

    let n = vars.names.len();
    if n == 0 {
        return Err(PolysetError::NoVariables);
    }
    let mut polys = Vec::with_capacity(raw_polys.len());
    for (line_no, terms) in raw_polys {
        let monomials = terms
            .into_iter()
            .map(|(coeff, factors)| {
                let mut degrees = vec![0u32; n];
                for (v, e) in factors {
                    degrees[v] = degrees[v].saturating_add(e);
                }
                Monomial::new(coeff, degrees)
            })
            .collect();
        let poly = Polynomial::new(monomials).map_err(|e| match e {
            PolysetError::ZeroPolynomial => PolysetError::ZeroPolynomialAt { line: line_no },
            other => other,
        })?;
        polys.push(poly);
    }
    ProblemInstance::new(vars.names, polys)
}
