//! Recursive-descent parser for the SCOOP-subset grammar.
//!
//! The parser covers the class/feature/instruction/expression/type
//! productions, including explicit processor specifications `<x>` and
//! `<y.handler>`. Operator expressions and parentheses are accepted and
//! rewritten into qualified calls on the fly; precedence from tightest to
//! loosest is `not`, `+ -`, `= < >`, `and`, `or`, all left-associative.

use thiserror::Error;

use super::ast::*;
use super::token::{Keyword, Position, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{pos}: expected {expected}, found {found}")]
pub struct ParseError {
    pub expected: String,
    pub found: String,
    pub pos: Position,
}

struct Parser {
    tokens: Vec<Token>,
    index: usize,
}

type PResult<T> = Result<T, ParseError>;

pub fn parse(tokens: Vec<Token>) -> PResult<SourceProgram> {
    let mut parser = Parser { tokens, index: 0 };
    parser.program()
}

impl Parser {
    fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.index).map(|t| &t.kind)
    }

    fn peek_at(&self, offset: usize) -> Option<&TokenKind> {
        self.tokens.get(self.index + offset).map(|t| &t.kind)
    }

    fn pos(&self) -> Position {
        self.tokens
            .get(self.index)
            .or_else(|| self.tokens.last())
            .map(|t| t.pos)
            .unwrap_or(Position { line: 1, column: 1 })
    }

    fn bump(&mut self) -> Option<TokenKind> {
        let t = self.tokens.get(self.index).map(|t| t.kind.clone());
        if t.is_some() {
            self.index += 1;
        }
        t
    }

    fn error<T>(&self, expected: &str) -> PResult<T> {
        Err(ParseError {
            expected: expected.to_string(),
            found: self
                .peek()
                .map(|k| k.to_string())
                .unwrap_or_else(|| "end of input".to_string()),
            pos: self.pos(),
        })
    }

    fn expect(&mut self, kind: TokenKind, expected: &str) -> PResult<()> {
        if self.peek() == Some(&kind) {
            self.bump();
            Ok(())
        } else {
            self.error(expected)
        }
    }

    fn expect_keyword(&mut self, kw: Keyword) -> PResult<()> {
        self.expect(TokenKind::Keyword(kw), &format!("'{}'", kw.text()))
    }

    fn at_keyword(&self, kw: Keyword) -> bool {
        self.peek() == Some(&TokenKind::Keyword(kw))
    }

    fn eat_keyword(&mut self, kw: Keyword) -> bool {
        if self.at_keyword(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self, expected: &str) -> PResult<String> {
        match self.peek() {
            Some(TokenKind::Ident(_)) => match self.bump() {
                Some(TokenKind::Ident(name)) => Ok(name),
                _ => unreachable!(),
            },
            _ => self.error(expected),
        }
    }

    // program = {class_declaration} root_procedure_declaration
    fn program(&mut self) -> PResult<SourceProgram> {
        let mut classes = Vec::new();
        while self.at_keyword(Keyword::Class) || self.at_keyword(Keyword::Expanded) {
            classes.push(self.class_declaration()?);
        }
        let root = self.root_procedure_declaration()?;
        if self.peek().is_some() {
            return self.error("end of input");
        }
        Ok(SourceProgram { classes, root })
    }

    // root_procedure_declaration = "{" class_name "}" "." feature_name
    fn root_procedure_declaration(&mut self) -> PResult<RootSpec> {
        self.expect(TokenKind::LBrace, "'{' starting the root procedure")?;
        let class_name = self.ident("root class name")?;
        self.expect(TokenKind::RBrace, "'}'")?;
        self.expect(TokenKind::Dot, "'.'")?;
        let feature_name = self.ident("root procedure name")?;
        Ok(RootSpec {
            class_name,
            feature_name,
        })
    }

    fn class_declaration(&mut self) -> PResult<ClassDecl> {
        let is_expanded = self.eat_keyword(Keyword::Expanded);
        self.expect_keyword(Keyword::Class)?;
        let name = self.ident("class name")?;
        let mut formal_generics = Vec::new();
        if self.peek() == Some(&TokenKind::LBracket) {
            self.bump();
            formal_generics.push(self.ident("formal generic parameter")?);
            while self.peek() == Some(&TokenKind::Comma) {
                self.bump();
                formal_generics.push(self.ident("formal generic parameter")?);
            }
            self.expect(TokenKind::RBracket, "']'")?;
        }
        let mut creators = Vec::new();
        if self.eat_keyword(Keyword::Create) {
            creators.push(self.ident("creation procedure name")?);
            while self.peek() == Some(&TokenKind::Comma) {
                self.bump();
                creators.push(self.ident("creation procedure name")?);
            }
        }
        let mut feature_blocks = Vec::new();
        while self.at_keyword(Keyword::Feature) {
            self.bump();
            let clients = if self.peek() == Some(&TokenKind::LBrace) {
                self.bump();
                let mut names = vec![self.ident("client class name")?];
                while self.peek() == Some(&TokenKind::Comma) {
                    self.bump();
                    names.push(self.ident("client class name")?);
                }
                self.expect(TokenKind::RBrace, "'}'")?;
                Some(names)
            } else {
                None
            };
            let mut features = Vec::new();
            while self.at_feature_declaration() {
                features.push(self.feature_declaration()?);
            }
            feature_blocks.push(FeatureBlock { clients, features });
        }
        if feature_blocks.is_empty() {
            return self.error("'feature'");
        }
        let invariant = if self.eat_keyword(Keyword::Invariant) {
            Some(self.expression()?)
        } else {
            None
        };
        self.expect_keyword(Keyword::End)?;
        Ok(ClassDecl {
            is_expanded,
            name,
            formal_generics,
            creators,
            feature_blocks,
            invariant,
        })
    }

    fn at_feature_declaration(&self) -> bool {
        matches!(self.peek(), Some(TokenKind::Ident(_)))
    }

    // feature_declaration = routine_declaration | attribute_declaration
    fn feature_declaration(&mut self) -> PResult<FeatureDecl> {
        let name = self.ident("feature name")?;
        // An attribute is `name : type` not followed by a routine body;
        // a routine has formals, `require`, `local`, `do` or `once` next.
        if self.peek() == Some(&TokenKind::Colon) && !self.routine_follows_result_type() {
            self.bump();
            let ty = self.type_annotation()?;
            return Ok(FeatureDecl::Attribute(EntityDecl { name, ty }));
        }
        let mut formals = Vec::new();
        if self.peek() == Some(&TokenKind::LParen) {
            self.bump();
            formals.push(self.entity_declaration()?);
            while self.peek() == Some(&TokenKind::Semicolon) {
                self.bump();
                formals.push(self.entity_declaration()?);
            }
            self.expect(TokenKind::RParen, "')'")?;
        }
        let result_type = if self.peek() == Some(&TokenKind::Colon) {
            self.bump();
            Some(self.type_annotation()?)
        } else {
            None
        };
        let precondition = if self.eat_keyword(Keyword::Require) {
            Some(self.expression()?)
        } else {
            None
        };
        let mut locals = Vec::new();
        if self.eat_keyword(Keyword::Local) {
            while matches!(self.peek(), Some(TokenKind::Ident(_))) {
                locals.push(self.entity_declaration()?);
            }
        }
        let is_once = if self.eat_keyword(Keyword::Do) {
            false
        } else if self.eat_keyword(Keyword::Once) {
            true
        } else {
            return self.error("'do' or 'once'");
        };
        let body = self.instruction_list()?;
        let postcondition = if self.eat_keyword(Keyword::Ensure) {
            Some(self.expression()?)
        } else {
            None
        };
        self.expect_keyword(Keyword::End)?;
        Ok(FeatureDecl::Routine(RoutineDecl {
            name,
            formals,
            result_type,
            precondition,
            locals,
            is_once,
            body,
            postcondition,
        }))
    }

    /// Distinguishes `name: TYPE do ...` (a routine with a result type) from
    /// a plain attribute by scanning exactly one type annotation and looking
    /// at the token that follows it.
    fn routine_follows_result_type(&self) -> bool {
        let mut i = 1; // past ':'
        if matches!(
            self.peek_at(i),
            Some(TokenKind::Keyword(Keyword::Attached | Keyword::Detachable))
        ) {
            i += 1;
        }
        if matches!(self.peek_at(i), Some(TokenKind::Keyword(Keyword::Separate))) {
            i += 1;
            if self.peek_at(i) == Some(&TokenKind::Less) {
                loop {
                    match self.peek_at(i) {
                        Some(TokenKind::Greater) => {
                            i += 1;
                            break;
                        }
                        Some(_) => i += 1,
                        None => return false,
                    }
                }
            }
        }
        if !matches!(self.peek_at(i), Some(TokenKind::Ident(_))) {
            return false;
        }
        i += 1;
        if self.peek_at(i) == Some(&TokenKind::LBracket) {
            let mut depth = 0usize;
            loop {
                match self.peek_at(i) {
                    Some(TokenKind::LBracket) => depth += 1,
                    Some(TokenKind::RBracket) => {
                        depth -= 1;
                        if depth == 0 {
                            i += 1;
                            break;
                        }
                    }
                    Some(_) => {}
                    None => return false,
                }
                i += 1;
            }
        }
        matches!(
            self.peek_at(i),
            Some(TokenKind::Keyword(
                Keyword::Require | Keyword::Local | Keyword::Do | Keyword::Once
            ))
        )
    }

    fn entity_declaration(&mut self) -> PResult<EntityDecl> {
        let name = self.entity_name()?;
        self.expect(TokenKind::Colon, "':'")?;
        let ty = self.type_annotation()?;
        Ok(EntityDecl { name, ty })
    }

    // type = [detachable_tag] ["separate"] [explicit_processor_specification]
    //        class_name [actual_generics]
    fn type_annotation(&mut self) -> PResult<TypeAnnotation> {
        let detachable = if self.eat_keyword(Keyword::Detachable) {
            DetachableTag::Detachable
        } else {
            // Absence of both keywords is treated as attached.
            self.eat_keyword(Keyword::Attached);
            DetachableTag::Attached
        };
        let processor = if self.eat_keyword(Keyword::Separate) {
            if self.peek() == Some(&TokenKind::Less) {
                self.bump();
                let entity = self.entity_name()?;
                if self.peek() == Some(&TokenKind::Dot) {
                    self.bump();
                    let handler = self.ident("'handler'")?;
                    if handler != "handler" {
                        return self.error("'handler'");
                    }
                    self.expect(TokenKind::Greater, "'>'")?;
                    ProcessorTag::ExplicitQualified(entity)
                } else {
                    self.expect(TokenKind::Greater, "'>'")?;
                    ProcessorTag::ExplicitUnqualified(entity)
                }
            } else {
                ProcessorTag::SeparateTop
            }
        } else {
            ProcessorTag::NonSeparate
        };
        let class_name = self.ident("class name")?;
        let mut actual_generics = Vec::new();
        if self.peek() == Some(&TokenKind::LBracket) {
            self.bump();
            actual_generics.push(self.type_annotation()?);
            while self.peek() == Some(&TokenKind::Comma) {
                self.bump();
                actual_generics.push(self.type_annotation()?);
            }
            self.expect(TokenKind::RBracket, "']'")?;
        }
        Ok(TypeAnnotation {
            detachable,
            processor,
            class_name,
            actual_generics,
        })
    }

    fn instruction_list(&mut self) -> PResult<Vec<Instruction>> {
        let mut instructions = Vec::new();
        loop {
            if self.peek() == Some(&TokenKind::Semicolon) {
                self.bump();
                continue;
            }
            match self.peek() {
                Some(TokenKind::Ident(_))
                | Some(TokenKind::Keyword(Keyword::Create))
                | Some(TokenKind::Keyword(Keyword::If))
                | Some(TokenKind::Keyword(Keyword::Until))
                | Some(TokenKind::LParen) => {
                    instructions.push(self.instruction()?);
                }
                _ => break,
            }
        }
        Ok(instructions)
    }

    fn instruction(&mut self) -> PResult<Instruction> {
        if self.eat_keyword(Keyword::Create) {
            let target = self.entity_name()?;
            self.expect(TokenKind::Dot, "'.'")?;
            let feature = self.ident("creation procedure name")?;
            let args = self.actual_arguments()?;
            return Ok(Instruction::Create {
                target,
                feature,
                args,
            });
        }
        if self.eat_keyword(Keyword::If) {
            let condition = self.expression()?;
            self.expect_keyword(Keyword::Then)?;
            let then_branch = self.instruction_list()?;
            self.expect_keyword(Keyword::Else)?;
            let else_branch = self.instruction_list()?;
            self.expect_keyword(Keyword::End)?;
            return Ok(Instruction::If {
                condition,
                then_branch,
                else_branch,
            });
        }
        if self.eat_keyword(Keyword::Until) {
            let condition = self.expression()?;
            self.expect_keyword(Keyword::Loop)?;
            let body = self.instruction_list()?;
            self.expect_keyword(Keyword::End)?;
            return Ok(Instruction::Until { condition, body });
        }
        // assignment or command call; both start with an entity name.
        if matches!(self.peek(), Some(TokenKind::Ident(_)))
            && self.peek_at(1) == Some(&TokenKind::Assign)
        {
            let target = self.entity_name()?;
            self.bump(); // :=
            let expr = self.expression()?;
            return Ok(Instruction::Assign { target, expr });
        }
        let expr = self.primary_raw()?;
        match desugar_infix(expr) {
            Expr::Call {
                target,
                feature,
                args,
            } => Ok(Instruction::Call {
                target: *target,
                feature,
                args,
            }),
            _ => self.error("command call"),
        }
    }

    fn actual_arguments(&mut self) -> PResult<Vec<Expr>> {
        let mut args = Vec::new();
        if self.peek() == Some(&TokenKind::LParen) {
            self.bump();
            args.push(self.expression()?);
            while self.peek() == Some(&TokenKind::Comma) {
                self.bump();
                args.push(self.expression()?);
            }
            self.expect(TokenKind::RParen, "')'")?;
        }
        Ok(args)
    }

    fn entity_name(&mut self) -> PResult<String> {
        self.ident("entity name")
    }

    fn expression(&mut self) -> PResult<Expr> {
        let raw = self.or_expr()?;
        Ok(desugar_infix(raw))
    }

    fn or_expr(&mut self) -> PResult<RawExpr> {
        let mut left = self.and_expr()?;
        while self.at_keyword(Keyword::Or) {
            self.bump();
            let right = self.and_expr()?;
            left = RawExpr::Binary {
                op: BinaryOp::Or,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PResult<RawExpr> {
        let mut left = self.comparison_expr()?;
        while self.at_keyword(Keyword::And) {
            self.bump();
            let right = self.comparison_expr()?;
            left = RawExpr::Binary {
                op: BinaryOp::And,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
        Ok(left)
    }

    fn comparison_expr(&mut self) -> PResult<RawExpr> {
        let mut left = self.additive_expr()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Equal) => BinaryOp::Equal,
                Some(TokenKind::Less) => BinaryOp::Less,
                Some(TokenKind::Greater) => BinaryOp::Greater,
                _ => break,
            };
            self.bump();
            let right = self.additive_expr()?;
            left = RawExpr::Binary {
                op,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
        Ok(left)
    }

    fn additive_expr(&mut self) -> PResult<RawExpr> {
        let mut left = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Plus) => BinaryOp::Plus,
                Some(TokenKind::Minus) => BinaryOp::Minus,
                _ => break,
            };
            self.bump();
            let right = self.unary_expr()?;
            left = RawExpr::Binary {
                op,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
        Ok(left)
    }

    fn unary_expr(&mut self) -> PResult<RawExpr> {
        if self.at_keyword(Keyword::Not) {
            self.bump();
            let operand = self.unary_expr()?;
            return Ok(RawExpr::Unary {
                op: UnaryOp::Not,
                operand: Box::new(operand),
            });
        }
        self.primary_raw()
    }

    fn primary_raw(&mut self) -> PResult<RawExpr> {
        let mut expr = match self.peek() {
            Some(TokenKind::LParen) => {
                self.bump();
                let inner = self.or_expr()?;
                self.expect(TokenKind::RParen, "')'")?;
                inner
            }
            Some(TokenKind::IntLiteral(_)) => match self.bump() {
                Some(TokenKind::IntLiteral(v)) => RawExpr::Literal(Literal::Int(v)),
                _ => unreachable!(),
            },
            Some(TokenKind::BoolLiteral(_)) => match self.bump() {
                Some(TokenKind::BoolLiteral(v)) => RawExpr::Literal(Literal::Bool(v)),
                _ => unreachable!(),
            },
            Some(TokenKind::CharLiteral(_)) => match self.bump() {
                Some(TokenKind::CharLiteral(c)) => RawExpr::Literal(Literal::Char(c)),
                _ => unreachable!(),
            },
            Some(TokenKind::VoidLiteral) => {
                self.bump();
                RawExpr::Literal(Literal::Void)
            }
            Some(TokenKind::Ident(_)) => RawExpr::Entity(self.entity_name()?),
            _ => return self.error("expression"),
        };
        while self.peek() == Some(&TokenKind::Dot) {
            self.bump();
            let feature = self.ident("feature name")?;
            let args: Vec<RawExpr> = {
                // Reuse the desugared-argument parser to keep one code path;
                // arguments are full expressions.
                let mut raw_args = Vec::new();
                if self.peek() == Some(&TokenKind::LParen) {
                    self.bump();
                    raw_args.push(self.or_expr()?);
                    while self.peek() == Some(&TokenKind::Comma) {
                        self.bump();
                        raw_args.push(self.or_expr()?);
                    }
                    self.expect(TokenKind::RParen, "')'")?;
                }
                raw_args
            };
            expr = RawExpr::Call {
                target: Box::new(expr),
                feature,
                args,
            };
        }
        Ok(expr)
    }
}
