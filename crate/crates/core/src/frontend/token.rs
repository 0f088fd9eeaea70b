//! Tokenizer for SCOOP-subset source text.
//!
//! Keywords, identifiers, literals and punctuation follow the surface
//! grammar; `--` starts a comment that runs to the end of the line. A minus
//! sign directly in front of digits is folded into the integer literal when
//! the previous token cannot end an expression, so `-5` is one token while
//! `a - 5` stays three.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keyword {
    Class,
    Expanded,
    Create,
    Feature,
    Invariant,
    End,
    Require,
    Local,
    Do,
    Once,
    Ensure,
    If,
    Then,
    Else,
    Until,
    Loop,
    Separate,
    Attached,
    Detachable,
    And,
    Or,
    Not,
}

impl Keyword {
    fn from_name(name: &str) -> Option<Keyword> {
        Some(match name {
            "class" => Keyword::Class,
            "expanded" => Keyword::Expanded,
            "create" => Keyword::Create,
            "feature" => Keyword::Feature,
            "invariant" => Keyword::Invariant,
            "end" => Keyword::End,
            "require" => Keyword::Require,
            "local" => Keyword::Local,
            "do" => Keyword::Do,
            "once" => Keyword::Once,
            "ensure" => Keyword::Ensure,
            "if" => Keyword::If,
            "then" => Keyword::Then,
            "else" => Keyword::Else,
            "until" => Keyword::Until,
            "loop" => Keyword::Loop,
            "separate" => Keyword::Separate,
            "attached" => Keyword::Attached,
            "detachable" => Keyword::Detachable,
            "and" => Keyword::And,
            "or" => Keyword::Or,
            "not" => Keyword::Not,
            _ => return None,
        })
    }

    pub fn text(&self) -> &'static str {
        match self {
            Keyword::Class => "class",
            Keyword::Expanded => "expanded",
            Keyword::Create => "create",
            Keyword::Feature => "feature",
            Keyword::Invariant => "invariant",
            Keyword::End => "end",
            Keyword::Require => "require",
            Keyword::Local => "local",
            Keyword::Do => "do",
            Keyword::Once => "once",
            Keyword::Ensure => "ensure",
            Keyword::If => "if",
            Keyword::Then => "then",
            Keyword::Else => "else",
            Keyword::Until => "until",
            Keyword::Loop => "loop",
            Keyword::Separate => "separate",
            Keyword::Attached => "attached",
            Keyword::Detachable => "detachable",
            Keyword::And => "and",
            Keyword::Or => "or",
            Keyword::Not => "not",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Keyword(Keyword),
    Ident(String),
    IntLiteral(i64),
    BoolLiteral(bool),
    CharLiteral(char),
    VoidLiteral,
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Less,
    Greater,
    Dot,
    Comma,
    Semicolon,
    Colon,
    Assign,
    Equal,
    Plus,
    Minus,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Keyword(k) => write!(f, "'{}'", k.text()),
            TokenKind::Ident(n) => write!(f, "identifier '{n}'"),
            TokenKind::IntLiteral(v) => write!(f, "integer literal {v}"),
            TokenKind::BoolLiteral(v) => write!(f, "boolean literal {v}"),
            TokenKind::CharLiteral(c) => write!(f, "character literal '{c}'"),
            TokenKind::VoidLiteral => write!(f, "'Void'"),
            TokenKind::LBrace => write!(f, "'{{'"),
            TokenKind::RBrace => write!(f, "'}}'"),
            TokenKind::LParen => write!(f, "'('"),
            TokenKind::RParen => write!(f, "')'"),
            TokenKind::LBracket => write!(f, "'['"),
            TokenKind::RBracket => write!(f, "']'"),
            TokenKind::Less => write!(f, "'<'"),
            TokenKind::Greater => write!(f, "'>'"),
            TokenKind::Dot => write!(f, "'.'"),
            TokenKind::Comma => write!(f, "','"),
            TokenKind::Semicolon => write!(f, "';'"),
            TokenKind::Colon => write!(f, "':'"),
            TokenKind::Assign => write!(f, "':='"),
            TokenKind::Equal => write!(f, "'='"),
            TokenKind::Plus => write!(f, "'+'"),
            TokenKind::Minus => write!(f, "'-'"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub pos: Position,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("{pos}: character '{ch}' is outside the grammar's alphabet")]
    IllegalCharacter { ch: char, pos: Position },
    #[error("{pos}: unterminated character literal")]
    UnterminatedChar { pos: Position },
    #[error("{pos}: integer literal out of range")]
    IntOutOfRange { pos: Position },
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    column: u32,
}

impl<'a> Lexer<'a> {
    fn new(source: &'a str) -> Self {
        Lexer {
            chars: source.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn pos(&self) -> Position {
        Position {
            line: self.line,
            column: self.column,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }
}

/// True when a token can end an expression, which makes a following `-`
/// a binary operator rather than a sign.
fn ends_expression(kind: &TokenKind) -> bool {
    matches!(
        kind,
        TokenKind::Ident(_)
            | TokenKind::IntLiteral(_)
            | TokenKind::BoolLiteral(_)
            | TokenKind::CharLiteral(_)
            | TokenKind::VoidLiteral
            | TokenKind::RParen
            | TokenKind::RBracket
            | TokenKind::Keyword(Keyword::End)
    )
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let mut lx = Lexer::new(source);
    let mut tokens: Vec<Token> = Vec::new();
    while let Some(c) = lx.peek() {
        if c == ' ' || c == '\t' || c == '\n' || c == '\r' {
            lx.bump();
            continue;
        }
        let pos = lx.pos();
        if c == '-' {
            lx.bump();
            if lx.peek() == Some('-') {
                // Comment runs to end of line.
                while lx.peek().is_some_and(|c| c != '\n') {
                    lx.bump();
                }
                continue;
            }
            let sign_position_is_unary = tokens.last().is_none_or(|t| !ends_expression(&t.kind));
            if sign_position_is_unary && lx.peek().is_some_and(|c| c.is_ascii_digit()) {
                let value = lex_digits(&mut lx, pos, true)?;
                tokens.push(Token {
                    kind: TokenKind::IntLiteral(value),
                    pos,
                });
            } else {
                tokens.push(Token {
                    kind: TokenKind::Minus,
                    pos,
                });
            }
            continue;
        }
        if c.is_ascii_digit() {
            let value = lex_digits(&mut lx, pos, false)?;
            tokens.push(Token {
                kind: TokenKind::IntLiteral(value),
                pos,
            });
            continue;
        }
        if c.is_ascii_alphabetic() {
            let mut name = String::new();
            while let Some(c) = lx.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    name.push(c);
                    lx.bump();
                } else {
                    break;
                }
            }
            let kind = match name.as_str() {
                "True" => TokenKind::BoolLiteral(true),
                "False" => TokenKind::BoolLiteral(false),
                "Void" => TokenKind::VoidLiteral,
                _ => match Keyword::from_name(&name) {
                    Some(k) => TokenKind::Keyword(k),
                    None => TokenKind::Ident(name),
                },
            };
            tokens.push(Token { kind, pos });
            continue;
        }
        if c == '\'' {
            lx.bump();
            let ch = lx.bump().ok_or(LexError::UnterminatedChar { pos })?;
            if lx.bump() != Some('\'') {
                return Err(LexError::UnterminatedChar { pos });
            }
            tokens.push(Token {
                kind: TokenKind::CharLiteral(ch),
                pos,
            });
            continue;
        }
        let kind = match c {
            '{' => TokenKind::LBrace,
            '}' => TokenKind::RBrace,
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            '[' => TokenKind::LBracket,
            ']' => TokenKind::RBracket,
            '<' => TokenKind::Less,
            '>' => TokenKind::Greater,
            '.' => TokenKind::Dot,
            ',' => TokenKind::Comma,
            ';' => TokenKind::Semicolon,
            '=' => TokenKind::Equal,
            '+' => TokenKind::Plus,
            ':' => {
                lx.bump();
                if lx.peek() == Some('=') {
                    lx.bump();
                    tokens.push(Token {
                        kind: TokenKind::Assign,
                        pos,
                    });
                } else {
                    tokens.push(Token {
                        kind: TokenKind::Colon,
                        pos,
                    });
                }
                continue;
            }
            other => return Err(LexError::IllegalCharacter { ch: other, pos }),
        };
        lx.bump();
        tokens.push(Token { kind, pos });
    }
    Ok(tokens)
}

fn lex_digits(lx: &mut Lexer<'_>, _pos: Position, negative: bool) -> Result<i64, LexError> {
    let mut value: i64 = 0;
    while let Some(c) = lx.peek() {
        let Some(d) = c.to_digit(10) else { break };
        lx.bump();
        // Integers are 64-bit signed and wrap on overflow.
        value = value.wrapping_mul(10).wrapping_add(d as i64);
    }
    Ok(if negative {
        value.wrapping_neg()
    } else {
        value
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(source: &str) -> Vec<TokenKind> {
        tokenize(source)
            .unwrap()
            .into_iter()
            .map(|t| t.kind)
            .collect()
    }

    #[test]
    fn create_call_tokens() {
        assert_eq!(
            kinds("create x.make (1)"),
            vec![
                TokenKind::Keyword(Keyword::Create),
                TokenKind::Ident("x".into()),
                TokenKind::Dot,
                TokenKind::Ident("make".into()),
                TokenKind::LParen,
                TokenKind::IntLiteral(1),
                TokenKind::RParen,
            ]
        );
    }

    #[test]
    fn negative_literal_is_one_token() {
        assert_eq!(kinds("-5"), vec![TokenKind::IntLiteral(-5)]);
    }

    #[test]
    fn minus_after_expression_is_an_operator() {
        assert_eq!(
            kinds("a - 5"),
            vec![
                TokenKind::Ident("a".into()),
                TokenKind::Minus,
                TokenKind::IntLiteral(5),
            ]
        );
    }

    #[test]
    fn alphabet_violation_is_reported_with_position() {
        let err = tokenize("x @ y").unwrap_err();
        assert_eq!(
            err,
            LexError::IllegalCharacter {
                ch: '@',
                pos: Position { line: 1, column: 3 }
            }
        );
    }

    #[test]
    fn comments_run_to_end_of_line() {
        assert_eq!(
            kinds("x -- anything at all, even @\ny"),
            vec![TokenKind::Ident("x".into()), TokenKind::Ident("y".into())]
        );
    }

    #[test]
    fn character_literal() {
        assert_eq!(kinds("'c'"), vec![TokenKind::CharLiteral('c')]);
    }
}
