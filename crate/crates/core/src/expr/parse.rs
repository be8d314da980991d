use super::{Expr, Func, Scope};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedEnd,
    UnexpectedToken(String),
    UnknownIdentifier(String),
    BadNumber(String),
    ExpectedClosingParen,
    NonConstantExponent,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {position}: {kind:?}")]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn next(&mut self) -> Result<(usize, Tok), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[self.pos..];
        let Some(c) = rest.chars().next() else {
            return Ok((start, Tok::End));
        };
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += 1;
            return Ok((start, t));
        }
        if c.is_ascii_digit() || c == '.' {
            let bytes = rest.as_bytes();
            let mut i = 0;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &rest[..i];
            self.pos += i;
            return text
                .parse::<f64>()
                .map(|v| (start, Tok::Num(v)))
                .map_err(|_| ParseError {
                    position: start,
                    kind: ParseErrorKind::BadNumber(text.to_string()),
                });
        }
        if c.is_alphabetic() || c == '_' {
            let len: usize = rest
                .chars()
                .take_while(|ch| ch.is_alphanumeric() || *ch == '_')
                .map(char::len_utf8)
                .sum();
            self.pos += len;
            return Ok((start, Tok::Ident(rest[..len].to_string())));
        }
        Err(ParseError {
            position: start,
            kind: ParseErrorKind::UnexpectedChar(c),
        })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    scope: &'a Scope,
    peeked: Option<(usize, Tok)>,
}

impl Parser<'_> {
    fn peek(&mut self) -> Result<&(usize, Tok), ParseError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next()?);
        }
        Ok(self.peeked.as_ref().unwrap())
    }

    fn bump(&mut self) -> Result<(usize, Tok), ParseError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next(),
        }
    }

    fn unexpected(pos: usize, tok: &Tok) -> ParseError {
        let kind = match tok {
            Tok::End => ParseErrorKind::UnexpectedEnd,
            other => ParseErrorKind::UnexpectedToken(format!("{other:?}")),
        };
        ParseError {
            position: pos,
            kind,
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            match self.peek()?.1 {
                Tok::Plus => {
                    self.bump()?;
                    lhs = lhs.add(&self.product()?);
                }
                Tok::Minus => {
                    self.bump()?;
                    lhs = lhs.sub(&self.product()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek()?.1 {
                Tok::Star => {
                    self.bump()?;
                    lhs = lhs.mul(&self.unary()?);
                }
                Tok::Slash => {
                    self.bump()?;
                    lhs = lhs.div(&self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek()?.1 {
            Tok::Minus => {
                self.bump()?;
                Ok(self.unary()?.neg())
            }
            Tok::Plus => {
                self.bump()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek()?.1 == Tok::Caret {
            self.bump()?;
            let pos = self.peek()?.0;
            let exponent = self.unary()?;
            return match exponent.as_const() {
                Some(p) => Ok(base.powf(p)),
                None => Err(ParseError {
                    position: pos,
                    kind: ParseErrorKind::NonConstantExponent,
                }),
            };
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (pos, tok) = self.bump()?;
        match tok {
            Tok::Num(v) => Ok(Expr::constant(v)),
            Tok::LParen => {
                let inner = self.sum()?;
                self.close_paren()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(e) = self.scope.var(&name) {
                    return Ok(e);
                }
                if let Some(f) = Func::from_name(&name) {
                    let (p, t) = self.bump()?;
                    if t != Tok::LParen {
                        return Err(Self::unexpected(p, &t));
                    }
                    let arg = self.sum()?;
                    self.close_paren()?;
                    return Ok(arg.apply(f));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::constant(std::f64::consts::PI)),
                    "e" => Ok(Expr::constant(std::f64::consts::E)),
                    _ => Err(ParseError {
                        position: pos,
                        kind: ParseErrorKind::UnknownIdentifier(name),
                    }),
                }
            }
            other => Err(Self::unexpected(pos, &other)),
        }
    }

    fn close_paren(&mut self) -> Result<(), ParseError> {
        let (p, t) = self.bump()?;
        match t {
            Tok::RParen => Ok(()),
            Tok::End => Err(ParseError {
                position: p,
                kind: ParseErrorKind::ExpectedClosingParen,
            }),
            other => Err(Self::unexpected(p, &other)),
        }
    }
}

pub(super) fn parse(source: &str, scope: &Scope) -> Result<Expr, ParseError> {
    let mut p = Parser {
        lexer: Lexer {
            src: source,
            pos: 0,
        },
        scope,
        peeked: None,
    };
    let e = p.sum()?;
    let (pos, tok) = p.bump()?;
    if tok != Tok::End {
        return Err(Parser::unexpected(pos, &tok));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope() -> Scope {
        Scope::new(["x1", "x2", "y"])
    }

    #[test]
    fn unclosed_paren_fails_at_end() {
        let err = scope().parse("sin(x1+x2").unwrap_err();
        assert_eq!(err.position, 9);
        assert_eq!(err.kind, ParseErrorKind::ExpectedClosingParen);
    }

    #[test]
    fn precedence() {
        let s = scope();
        let e = s.parse("-y^2 + 2*x1/4").unwrap();
        assert_eq!(e.eval(&[2.0, 0.0, 3.0]).unwrap(), -9.0 + 1.0);
        let e = s.parse("2^3^2").unwrap();
        assert_eq!(e.eval(&[]).unwrap(), 512.0);
        let e = s.parse("y^-2").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0, 2.0]).unwrap(), 0.25);
        let e = s.parse("x1 - x2 - y").unwrap();
        assert_eq!(e.eval(&[1.0, 2.0, 3.0]).unwrap(), -4.0);
    }

    #[test]
    fn numbers_and_constants() {
        let s = scope();
        assert_eq!(s.parse("1e-3").unwrap().as_const(), Some(1e-3));
        assert_eq!(s.parse(".5").unwrap().as_const(), Some(0.5));
        assert_eq!(s.parse("2.5E2").unwrap().as_const(), Some(250.0));
        assert_eq!(
            s.parse("pi").unwrap().as_const(),
            Some(std::f64::consts::PI)
        );
        let shadow = Scope::new(["e"]);
        assert_eq!(shadow.parse("e").unwrap(), Expr::var(0));
    }

    #[test]
    fn errors() {
        let s = scope();
        assert!(matches!(
            s.parse("z").unwrap_err().kind,
            ParseErrorKind::UnknownIdentifier(_)
        ));
        assert!(matches!(
            s.parse("x1 $").unwrap_err().kind,
            ParseErrorKind::UnexpectedChar('$')
        ));
        assert_eq!(
            s.parse("x1^x2").unwrap_err().kind,
            ParseErrorKind::NonConstantExponent
        );
        assert_eq!(
            s.parse("x1 +").unwrap_err().kind,
            ParseErrorKind::UnexpectedEnd
        );
        assert!(s.parse("x1 x2").is_err());
        assert!(s.parse("sin x1").is_err());
    }
}
