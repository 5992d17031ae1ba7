//! Recursive-descent parser for a single Java method declaration.
//!
//! The accepted language is a method-level subset: modifiers, generic and
//! array types, the usual statement forms and the expression grammar without
//! lambdas, method references or anonymous classes. Constructs outside the
//! subset are reported as [`JavaError::Unsupported`] so callers can skip them.

use super::ast::AstNode;
use super::lexer::{Token, TokenKind};
use super::JavaError;

const PRIMITIVES: &[&str] = &["boolean", "byte", "char", "short", "int", "long", "float", "double"];

const MODIFIERS: &[&str] =
    &["public", "protected", "private", "static", "abstract", "final", "native", "synchronized", "transient", "volatile", "strictfp", "default"];

const ASSIGN_OPS: &[&str] = &["=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>="];

type PResult<T> = Result<T, JavaError>;

pub fn parse_method(tokens: &[Token]) -> PResult<AstNode> {
    let mut p = Parser { toks: tokens, pos: 0, gt_used: 0 };
    let root = p.method_declaration()?;
    if p.pos < tokens.len() {
        return Err(p.error(&["end of input"]));
    }
    Ok(root)
}

struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
    /// Number of `>` characters already consumed from the current `>>`/`>>>` token.
    gt_used: usize,
}

fn binary_precedence(op: &str) -> Option<u8> {
    Some(match op {
        "||" => 1,
        "&&" => 2,
        "|" => 3,
        "^" => 4,
        "&" => 5,
        "==" | "!=" => 6,
        "<" | ">" | "<=" | ">=" | "instanceof" => 7,
        "<<" | ">>" | ">>>" => 8,
        "+" | "-" => 9,
        "*" | "/" | "%" => 10,
        _ => return None,
    })
}

impl<'t> Parser<'t> {
    // ---- token helpers ----

    fn peek_at(&self, ahead: usize) -> Option<&'t Token> {
        self.toks.get(self.pos + ahead)
    }

    fn peek_text(&self, ahead: usize) -> &'t str {
        self.peek_at(ahead).map_or("", |t| t.text.as_str())
    }

    fn at(&self, text: &str) -> bool {
        self.gt_used == 0 && self.peek_text(0) == text
    }

    fn at_kind(&self, kind: TokenKind) -> bool {
        self.peek_at(0).is_some_and(|t| t.kind == kind)
    }

    fn error(&self, expected: &[&str]) -> JavaError {
        JavaError::Parse {
            index: self.pos,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek_at(0).map(|t| t.text.clone()),
        }
    }

    fn unsupported(&self, name: &'static str) -> JavaError {
        JavaError::Unsupported { name, index: self.pos }
    }

    fn bump(&mut self) -> usize {
        let i = self.pos;
        self.pos += 1;
        self.gt_used = 0;
        i
    }

    fn eat(&mut self, text: &str) -> bool {
        if self.at(text) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, text: &str) -> PResult<usize> {
        if self.at(text) {
            Ok(self.bump())
        } else {
            Err(self.error(&[text]))
        }
    }

    fn expect_ident(&mut self) -> PResult<usize> {
        if self.at_kind(TokenKind::Identifier) {
            Ok(self.bump())
        } else {
            Err(self.error(&["identifier"]))
        }
    }

    /// Consumes a single `>`, splitting `>>` and `>>>` tokens when closing
    /// nested type-argument lists.
    fn eat_type_close(&mut self) -> bool {
        let text = self.peek_text(0);
        let width = match text {
            ">" => 1,
            ">>" => 2,
            ">>>" => 3,
            _ => return false,
        };
        self.gt_used += 1;
        if self.gt_used == width {
            self.bump();
        }
        true
    }

    /// Index of the last token touched so far (including a partially consumed `>>`).
    fn last(&self) -> usize {
        if self.gt_used > 0 {
            self.pos
        } else {
            self.pos - 1
        }
    }

    fn node(&self, label: &'static str, start: usize, children: Vec<AstNode>) -> AstNode {
        AstNode { label, children, span: (start, self.last()) }
    }

    fn leaf(&self, label: &'static str, start: usize) -> AstNode {
        self.node(label, start, Vec::new())
    }

    fn save(&self) -> (usize, usize) {
        (self.pos, self.gt_used)
    }

    fn restore(&mut self, state: (usize, usize)) {
        self.pos = state.0;
        self.gt_used = state.1;
    }

    // ---- declarations ----

    fn method_declaration(&mut self) -> PResult<AstNode> {
        let start = self.pos;
        let mut children = self.modifiers()?;
        if self.at("<") {
            let tp_start = self.bump();
            let mut params = Vec::new();
            loop {
                params.push(self.type_parameter()?);
                if !self.eat(",") {
                    break;
                }
            }
            if !self.eat_type_close() {
                return Err(self.error(&[">"]));
            }
            // One node per declared type variable; the brackets belong to the first.
            if let Some(first) = params.first_mut() {
                first.span.0 = tp_start;
            }
            children.extend(params);
        }
        if self.at("class") || self.at("interface") || self.at("enum") {
            return Err(self.unsupported("type declaration"));
        }
        // Constructors have no return type: the name is directly followed by `(`.
        let is_ctor = self.at_kind(TokenKind::Identifier) && self.peek_text(1) == "(";
        if !is_ctor {
            if self.at("void") {
                let s = self.bump();
                children.push(self.leaf("Type", s));
            } else {
                children.push(self.parse_type(false)?);
            }
        }
        self.expect_ident()?;
        self.expect("(")?;
        if !self.at(")") {
            loop {
                children.push(self.formal_parameter()?);
                if !self.eat(",") {
                    break;
                }
            }
        }
        self.expect(")")?;
        while self.at("[") {
            self.bump();
            self.expect("]")?;
        }
        if self.at("throws") {
            let s = self.bump();
            let mut types = vec![self.parse_type(false)?];
            while self.eat(",") {
                types.push(self.parse_type(false)?);
            }
            children.push(self.node("Throws", s, types));
        }
        if self.at("{") {
            children.push(self.block()?);
        } else if !self.eat(";") {
            return Err(self.error(&["{", ";"]));
        }
        Ok(self.node("MethodDeclaration", start, children))
    }

    fn modifiers(&mut self) -> PResult<Vec<AstNode>> {
        let mut out = Vec::new();
        loop {
            if self.at("@") {
                if self.peek_text(1) == "interface" {
                    return Err(self.unsupported("type declaration"));
                }
                out.push(self.annotation()?);
            } else if MODIFIERS.contains(&self.peek_text(0)) && self.gt_used == 0 {
                // `synchronized (` starts a statement, not a modifier.
                if self.peek_text(0) == "synchronized" && self.peek_text(1) == "(" {
                    break;
                }
                let s = self.bump();
                out.push(self.leaf("Modifier", s));
            } else {
                break;
            }
        }
        Ok(out)
    }

    fn annotation(&mut self) -> PResult<AstNode> {
        let s = self.expect("@")?;
        self.expect_ident()?;
        while self.at(".") && self.peek_at(1).is_some_and(|t| t.kind == TokenKind::Identifier) {
            self.bump();
            self.bump();
        }
        if self.at("(") {
            return Err(self.unsupported("annotation with arguments"));
        }
        Ok(self.leaf("Annotation", s))
    }

    fn type_parameter(&mut self) -> PResult<AstNode> {
        let s = self.expect_ident()?;
        let mut bounds = Vec::new();
        if self.eat("extends") {
            bounds.push(self.parse_type(false)?);
            while self.eat("&") {
                bounds.push(self.parse_type(false)?);
            }
        }
        Ok(self.node("TypeParameter", s, bounds))
    }

    fn formal_parameter(&mut self) -> PResult<AstNode> {
        let s = self.pos;
        self.modifiers()?;
        self.parse_type(false)?;
        self.eat("...");
        self.expect_ident()?;
        while self.at("[") {
            self.bump();
            self.expect("]")?;
        }
        Ok(self.leaf("FormalParameter", s))
    }

    /// Parses a type. With `allow_diamond`, an empty `<>` is accepted.
    fn parse_type(&mut self, allow_diamond: bool) -> PResult<AstNode> {
        let start = self.pos;
        let mut args = Vec::new();
        if PRIMITIVES.contains(&self.peek_text(0)) && self.gt_used == 0 {
            self.bump();
        } else if self.at("?") {
            self.bump();
            if self.eat("extends") || self.eat("super") {
                args.push(self.parse_type(false)?);
            }
            return Ok(self.node("Type", start, args));
        } else {
            self.expect_ident()?;
            loop {
                if self.at("<") {
                    self.bump();
                    if allow_diamond && self.eat_type_close() {
                        break;
                    }
                    loop {
                        while self.at("@") {
                            self.annotation()?;
                        }
                        args.push(self.parse_type(false)?);
                        if !self.eat(",") {
                            break;
                        }
                    }
                    if !self.eat_type_close() {
                        return Err(self.error(&[">"]));
                    }
                }
                if self.at(".") && self.peek_at(1).is_some_and(|t| t.kind == TokenKind::Identifier) {
                    self.bump();
                    self.bump();
                } else {
                    break;
                }
            }
        }
        while self.at("[") && self.peek_text(1) == "]" {
            self.bump();
            self.bump();
        }
        Ok(self.node("Type", start, args))
    }

    // ---- statements ----

    fn block(&mut self) -> PResult<AstNode> {
        let s = self.expect("{")?;
        let mut stmts = Vec::new();
        while !self.at("}") {
            if self.peek_at(0).is_none() {
                return Err(self.error(&["}"]));
            }
            stmts.push(self.statement()?);
        }
        self.bump();
        Ok(self.node("BlockStatement", s, stmts))
    }

    fn statement(&mut self) -> PResult<AstNode> {
        let s = self.pos;
        match self.peek_text(0) {
            "{" => self.block(),
            ";" => {
                self.bump();
                Ok(self.leaf("EmptyStatement", s))
            }
            "if" => {
                self.bump();
                let cond = self.par_expression()?;
                let then = self.statement()?;
                let mut children = vec![cond, then];
                if self.eat("else") {
                    children.push(self.statement()?);
                }
                Ok(self.node("IfStatement", s, children))
            }
            "while" => {
                self.bump();
                let cond = self.par_expression()?;
                let body = self.statement()?;
                Ok(self.node("WhileStatement", s, vec![cond, body]))
            }
            "do" => {
                self.bump();
                let body = self.statement()?;
                self.expect("while")?;
                let cond = self.par_expression()?;
                self.expect(";")?;
                Ok(self.node("DoStatement", s, vec![body, cond]))
            }
            "for" => self.for_statement(),
            "switch" => self.switch_statement(),
            "try" => self.try_statement(),
            "return" => {
                self.bump();
                let mut children = Vec::new();
                if !self.at(";") {
                    children.push(self.expression()?);
                }
                self.expect(";")?;
                Ok(self.node("ReturnStatement", s, children))
            }
            "throw" => {
                self.bump();
                let e = self.expression()?;
                self.expect(";")?;
                Ok(self.node("ThrowStatement", s, vec![e]))
            }
            "break" | "continue" => {
                let label = if self.at("break") { "BreakStatement" } else { "ContinueStatement" };
                self.bump();
                if self.at_kind(TokenKind::Identifier) {
                    self.bump();
                }
                self.expect(";")?;
                Ok(self.leaf(label, s))
            }
            "synchronized" if self.peek_text(1) == "(" => {
                self.bump();
                let lock = self.par_expression()?;
                let body = self.block()?;
                Ok(self.node("SynchronizedStatement", s, vec![lock, body]))
            }
            "assert" => {
                self.bump();
                let mut children = vec![self.expression()?];
                if self.eat(":") {
                    children.push(self.expression()?);
                }
                self.expect(";")?;
                Ok(self.node("AssertStatement", s, children))
            }
            "class" | "interface" | "enum" | "abstract" | "static" => Err(self.unsupported("local type declaration")),
            "yield" if self.peek_at(1).is_some_and(|t| t.kind != TokenKind::Operator) => Err(self.unsupported("switch expression")),
            _ => {
                if self.at_kind(TokenKind::Identifier) && self.peek_text(1) == ":" {
                    return Err(self.unsupported("labeled statement"));
                }
                if let Some(decl) = self.try_local_var_decl()? {
                    self.expect(";")?;
                    let mut decl = decl;
                    decl.span.1 = self.last();
                    return Ok(decl);
                }
                let e = self.expression()?;
                self.expect(";")?;
                Ok(self.node("StatementExpression", s, vec![e]))
            }
        }
    }

    fn par_expression(&mut self) -> PResult<AstNode> {
        self.expect("(")?;
        let e = self.expression()?;
        self.expect(")")?;
        Ok(e)
    }

    /// Attempts `[modifiers] Type declarator {, declarator}` without the
    /// terminating semicolon. Returns `None` (with the position restored) when
    /// the tokens do not look like a declaration.
    fn try_local_var_decl(&mut self) -> PResult<Option<AstNode>> {
        let saved = self.save();
        let s = self.pos;
        let explicit = self.at("final") || self.at("@");
        if explicit {
            self.modifiers()?;
        }
        let is_type_start = self.at_kind(TokenKind::Identifier) || PRIMITIVES.contains(&self.peek_text(0));
        if !is_type_start {
            if explicit {
                return Err(self.error(&["type"]));
            }
            return Ok(None);
        }
        let ty = match self.parse_type(false) {
            Ok(t) => t,
            Err(e) if explicit => return Err(e),
            Err(_) => {
                self.restore(saved);
                return Ok(None);
            }
        };
        let looks_like_decl = self.at_kind(TokenKind::Identifier) && self.gt_used == 0 && matches!(self.peek_text(1), "=" | ";" | "," | "[" | ":");
        if !looks_like_decl {
            if explicit {
                return Err(self.error(&["identifier"]));
            }
            self.restore(saved);
            return Ok(None);
        }
        let mut children = vec![ty];
        loop {
            children.push(self.variable_declarator()?);
            if !self.eat(",") {
                break;
            }
        }
        Ok(Some(self.node("LocalVariableDeclaration", s, children)))
    }

    fn variable_declarator(&mut self) -> PResult<AstNode> {
        let s = self.expect_ident()?;
        while self.at("[") {
            self.bump();
            self.expect("]")?;
        }
        let mut children = Vec::new();
        if self.eat("=") {
            children.push(self.variable_initializer()?);
        }
        Ok(self.node("VariableDeclarator", s, children))
    }

    fn variable_initializer(&mut self) -> PResult<AstNode> {
        if self.at("{") {
            self.array_initializer()
        } else {
            self.expression()
        }
    }

    fn array_initializer(&mut self) -> PResult<AstNode> {
        let s = self.expect("{")?;
        let mut items = Vec::new();
        while !self.at("}") {
            items.push(self.variable_initializer()?);
            if !self.eat(",") {
                break;
            }
        }
        self.expect("}")?;
        Ok(self.node("ArrayInitializer", s, items))
    }

    fn for_statement(&mut self) -> PResult<AstNode> {
        let s = self.expect("for")?;
        let cs = self.expect("(")?;
        let mut control = Vec::new();
        let mut enhanced = false;
        if !self.at(";") {
            if let Some(decl) = self.try_local_var_decl()? {
                control.push(decl);
                if self.eat(":") {
                    enhanced = true;
                    control.push(self.expression()?);
                }
            } else {
                control.extend(self.expression_list()?);
            }
        }
        if !enhanced {
            self.expect(";")?;
            if !self.at(";") {
                control.push(self.expression()?);
            }
            self.expect(";")?;
            if !self.at(")") {
                control.extend(self.expression_list()?);
            }
        }
        self.expect(")")?;
        let label = if enhanced { "EnhancedForControl" } else { "ForControl" };
        let control = self.node(label, cs, control);
        let body = self.statement()?;
        Ok(self.node("ForStatement", s, vec![control, body]))
    }

    fn expression_list(&mut self) -> PResult<Vec<AstNode>> {
        let mut out = vec![self.expression()?];
        while self.eat(",") {
            out.push(self.expression()?);
        }
        Ok(out)
    }

    fn switch_statement(&mut self) -> PResult<AstNode> {
        let s = self.expect("switch")?;
        let mut children = vec![self.par_expression()?];
        self.expect("{")?;
        while !self.at("}") {
            let cs = self.pos;
            let mut case_children = Vec::new();
            if self.eat("default") {
            } else if self.eat("case") {
                case_children.extend(self.expression_list()?);
            } else {
                return Err(self.error(&["case", "default", "}"]));
            }
            if self.at("->") {
                return Err(self.unsupported("switch rule"));
            }
            self.expect(":")?;
            while !(self.at("case") || self.at("default") || self.at("}")) {
                if self.peek_at(0).is_none() {
                    return Err(self.error(&["}"]));
                }
                case_children.push(self.statement()?);
            }
            children.push(self.node("SwitchStatementCase", cs, case_children));
        }
        self.bump();
        Ok(self.node("SwitchStatement", s, children))
    }

    fn try_statement(&mut self) -> PResult<AstNode> {
        let s = self.expect("try")?;
        let mut children = Vec::new();
        if self.eat("(") {
            loop {
                let rs = self.pos;
                self.modifiers()?;
                let ty = self.parse_type(false)?;
                self.expect_ident()?;
                self.expect("=")?;
                let init = self.expression()?;
                children.push(self.node("TryResource", rs, vec![ty, init]));
                if !self.eat(";") || self.at(")") {
                    break;
                }
            }
            self.expect(")")?;
        }
        children.push(self.block()?);
        let mut handlers = false;
        while self.at("catch") {
            let cs = self.bump();
            self.expect("(")?;
            let ps = self.pos;
            self.modifiers()?;
            let mut types = vec![self.parse_type(false)?];
            while self.eat("|") {
                types.push(self.parse_type(false)?);
            }
            self.expect_ident()?;
            let param = self.node("CatchClauseParameter", ps, types);
            self.expect(")")?;
            let body = self.block()?;
            let mut clause = vec![param];
            clause.extend(body.children);
            children.push(self.node("CatchClause", cs, clause));
            handlers = true;
        }
        if self.at("finally") {
            let fs = self.bump();
            let body = self.block()?;
            children.push(self.node("FinallyBlock", fs, body.children));
            handlers = true;
        }
        if !handlers && children.len() == 1 {
            return Err(self.error(&["catch", "finally"]));
        }
        Ok(self.node("TryStatement", s, children))
    }

    // ---- expressions ----

    fn expression(&mut self) -> PResult<AstNode> {
        let s = self.pos;
        if self.at_kind(TokenKind::Identifier) && self.peek_text(1) == "->" {
            return Err(self.unsupported("lambda"));
        }
        let lhs = self.ternary()?;
        if self.gt_used == 0 && ASSIGN_OPS.contains(&self.peek_text(0)) {
            self.bump();
            let rhs = if self.at("{") { self.array_initializer()? } else { self.expression()? };
            return Ok(self.node("Assignment", s, vec![lhs, rhs]));
        }
        Ok(lhs)
    }

    fn ternary(&mut self) -> PResult<AstNode> {
        let s = self.pos;
        let cond = self.binary(1)?;
        if self.eat("?") {
            let a = self.ternary_branch()?;
            self.expect(":")?;
            let b = self.ternary_branch()?;
            return Ok(self.node("TernaryExpression", s, vec![cond, a, b]));
        }
        Ok(cond)
    }

    fn ternary_branch(&mut self) -> PResult<AstNode> {
        if self.at_kind(TokenKind::Identifier) && self.peek_text(1) == "->" {
            return Err(self.unsupported("lambda"));
        }
        self.ternary()
    }

    fn binary(&mut self, min_prec: u8) -> PResult<AstNode> {
        let s = self.pos;
        let mut lhs = self.unary()?;
        loop {
            if self.gt_used != 0 {
                break;
            }
            let op = self.peek_text(0);
            let Some(prec) = binary_precedence(op) else { break };
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = if op == "instanceof" {
                self.eat("final");
                self.parse_type(false)?
            } else {
                self.binary(prec + 1)?
            };
            lhs = self.node("BinaryOperation", s, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<AstNode> {
        let s = self.pos;
        match self.peek_text(0) {
            "+" | "-" | "++" | "--" | "!" | "~" if self.gt_used == 0 => {
                self.bump();
                let operand = self.unary()?;
                Ok(self.node("UnaryOperation", s, vec![operand]))
            }
            "(" => {
                if let Some(cast) = self.try_cast()? {
                    return Ok(cast);
                }
                self.postfix()
            }
            _ => self.postfix(),
        }
    }

    fn try_cast(&mut self) -> PResult<Option<AstNode>> {
        let saved = self.save();
        let s = self.bump();
        if self.paren_closes_before_arrow() {
            return Err(self.unsupported("lambda"));
        }
        let primitive = PRIMITIVES.contains(&self.peek_text(0));
        if !(primitive || self.at_kind(TokenKind::Identifier)) {
            self.restore(saved);
            return Ok(None);
        }
        let ty = match self.parse_type(false) {
            Ok(ty) => ty,
            Err(_) => {
                self.restore(saved);
                return Ok(None);
            }
        };
        if !self.at(")") {
            self.restore(saved);
            return Ok(None);
        }
        self.bump();
        let operand_follows = match self.peek_at(0) {
            None => false,
            Some(t) => match t.kind {
                TokenKind::Identifier
                | TokenKind::NumberLiteral
                | TokenKind::StringLiteral
                | TokenKind::CharLiteral
                | TokenKind::BooleanLiteral
                | TokenKind::NullLiteral => true,
                TokenKind::Keyword => matches!(t.text.as_str(), "this" | "super" | "new") || PRIMITIVES.contains(&t.text.as_str()),
                TokenKind::Separator => t.text == "(",
                TokenKind::Operator => matches!(t.text.as_str(), "!" | "~") || (primitive && matches!(t.text.as_str(), "+" | "-" | "++" | "--")),
            },
        };
        if !operand_follows {
            self.restore(saved);
            return Ok(None);
        }
        let operand = self.unary()?;
        Ok(Some(self.node("Cast", s, vec![ty, operand])))
    }

    /// With the cursor just past a `(`, reports whether the matching `)` is followed by `->`.
    fn paren_closes_before_arrow(&self) -> bool {
        let mut depth = 1usize;
        let mut i = self.pos;
        while let Some(t) = self.toks.get(i) {
            match t.text.as_str() {
                "(" => depth += 1,
                ")" => {
                    depth -= 1;
                    if depth == 0 {
                        return self.toks.get(i + 1).is_some_and(|n| n.text == "->");
                    }
                }
                ";" | "{" | "}" => return false,
                _ => {}
            }
            i += 1;
        }
        false
    }

    fn postfix(&mut self) -> PResult<AstNode> {
        let s = self.pos;
        let mut e = self.primary()?;
        loop {
            if self.at(".") {
                self.bump();
                if self.at("<") {
                    return Err(self.unsupported("explicit generic invocation"));
                }
                if self.at("new") {
                    return Err(self.unsupported("qualified class creation"));
                }
                self.expect_ident()?;
                if self.at("(") {
                    let mut children = vec![e];
                    children.extend(self.arguments()?);
                    e = self.node("MethodInvocation", s, children);
                } else {
                    e = self.node("FieldAccess", s, vec![e]);
                }
            } else if self.at("[") {
                self.bump();
                let index = self.expression()?;
                self.expect("]")?;
                e = self.node("ArraySelector", s, vec![e, index]);
            } else if self.at("::") {
                return Err(self.unsupported("method reference"));
            } else {
                break;
            }
        }
        while self.at("++") || self.at("--") {
            self.bump();
            e = self.node("PostfixOperation", s, vec![e]);
        }
        Ok(e)
    }

    fn arguments(&mut self) -> PResult<Vec<AstNode>> {
        self.expect("(")?;
        let mut args = Vec::new();
        if !self.at(")") {
            loop {
                args.push(self.expression()?);
                if self.at(",") {
                    self.bump();
                    continue;
                }
                if self.at(")") {
                    break;
                }
                return Err(self.error(&[",", ")"]));
            }
        }
        self.bump();
        Ok(args)
    }

    fn primary(&mut self) -> PResult<AstNode> {
        let s = self.pos;
        let Some(tok) = self.peek_at(0) else {
            return Err(self.error(&["expression"]));
        };
        if self.gt_used != 0 {
            return Err(self.error(&["expression"]));
        }
        match tok.kind {
            TokenKind::NumberLiteral | TokenKind::StringLiteral | TokenKind::CharLiteral | TokenKind::BooleanLiteral | TokenKind::NullLiteral => {
                self.bump();
                Ok(self.leaf("Literal", s))
            }
            TokenKind::Identifier => self.name_expression(),
            TokenKind::Keyword => match tok.text.as_str() {
                "this" => {
                    self.bump();
                    if self.at("(") {
                        let args = self.arguments()?;
                        return Ok(self.node("ExplicitConstructorInvocation", s, args));
                    }
                    Ok(self.leaf("This", s))
                }
                "super" => {
                    self.bump();
                    if self.at("(") {
                        let args = self.arguments()?;
                        return Ok(self.node("SuperConstructorInvocation", s, args));
                    }
                    if self.at("::") {
                        return Err(self.unsupported("method reference"));
                    }
                    self.expect(".")?;
                    self.expect_ident()?;
                    if self.at("(") {
                        let args = self.arguments()?;
                        return Ok(self.node("SuperMethodInvocation", s, args));
                    }
                    Ok(self.leaf("SuperMemberReference", s))
                }
                "new" => self.creator(),
                "switch" => Err(self.unsupported("switch expression")),
                t if PRIMITIVES.contains(&t) || t == "void" => {
                    let ty = if t == "void" {
                        self.bump();
                        self.leaf("Type", s)
                    } else {
                        self.parse_type(false)?
                    };
                    if self.at("::") {
                        return Err(self.unsupported("method reference"));
                    }
                    self.expect(".")?;
                    self.expect("class")?;
                    Ok(self.node("ClassReference", s, vec![ty]))
                }
                _ => Err(self.error(&["expression"])),
            },
            TokenKind::Separator if tok.text == "(" => {
                self.bump();
                if self.paren_closes_before_arrow() {
                    return Err(self.unsupported("lambda"));
                }
                let e = self.expression()?;
                self.expect(")")?;
                Ok(e)
            }
            TokenKind::Separator if tok.text == "@" => Err(self.unsupported("annotated expression")),
            _ => Err(self.error(&["expression"])),
        }
    }

    /// `a`, `a.b.c`, `a.b.m(args)`, `Foo.class`, `Foo.this`, `Foo[].class`.
    fn name_expression(&mut self) -> PResult<AstNode> {
        let s = self.bump();
        loop {
            if self.at("(") {
                let args = self.arguments()?;
                return Ok(self.node("MethodInvocation", s, args));
            }
            if self.at(".") {
                match self.peek_at(1) {
                    Some(t) if t.kind == TokenKind::Identifier => {
                        self.bump();
                        self.bump();
                    }
                    Some(t) if t.text == "class" => {
                        let ty = self.leaf("Type", s);
                        self.bump();
                        self.bump();
                        return Ok(self.node("ClassReference", s, vec![ty]));
                    }
                    Some(t) if t.text == "this" => {
                        self.bump();
                        self.bump();
                        return Ok(self.leaf("This", s));
                    }
                    _ => break,
                }
            } else if self.at("[") && self.peek_text(1) == "]" {
                let ty = self.parse_type_from(s)?;
                self.expect(".")?;
                self.expect("class")?;
                return Ok(self.node("ClassReference", s, vec![ty]));
            } else {
                break;
            }
        }
        Ok(self.leaf("MemberReference", s))
    }

    /// Finishes a type whose name tokens start at `start` and have already
    /// been consumed; only array dimensions remain.
    fn parse_type_from(&mut self, start: usize) -> PResult<AstNode> {
        while self.at("[") && self.peek_text(1) == "]" {
            self.bump();
            self.bump();
        }
        Ok(self.leaf("Type", start))
    }

    fn creator(&mut self) -> PResult<AstNode> {
        let s = self.expect("new")?;
        if self.at("<") {
            return Err(self.unsupported("explicit generic invocation"));
        }
        let ty_start = self.pos;
        let primitive = PRIMITIVES.contains(&self.peek_text(0));
        let mut ty = self.parse_type_no_dims(!primitive)?;
        if self.at("[") {
            let mut children = Vec::new();
            let mut dims = Vec::new();
            while self.at("[") {
                self.bump();
                if self.at("]") {
                    self.bump();
                } else {
                    dims.push(self.expression()?);
                    self.expect("]")?;
                }
            }
            ty.span = (ty_start, ty.span.1);
            children.push(ty);
            children.extend(dims);
            if self.at("{") {
                children.push(self.array_initializer()?);
            }
            return Ok(self.node("ArrayCreator", s, children));
        }
        if primitive {
            return Err(self.error(&["["]));
        }
        let mut children = vec![ty];
        children.extend(self.arguments()?);
        if self.at("{") {
            return Err(self.unsupported("anonymous class"));
        }
        Ok(self.node("ClassCreator", s, children))
    }

    fn parse_type_no_dims(&mut self, allow_diamond: bool) -> PResult<AstNode> {
        let start = self.pos;
        if PRIMITIVES.contains(&self.peek_text(0)) {
            self.bump();
            return Ok(self.leaf("Type", start));
        }
        self.expect_ident()?;
        let mut args = Vec::new();
        loop {
            if self.at("<") {
                self.bump();
                if !(allow_diamond && self.eat_type_close()) {
                    loop {
                        args.push(self.parse_type(false)?);
                        if !self.eat(",") {
                            break;
                        }
                    }
                    if !self.eat_type_close() {
                        return Err(self.error(&[">"]));
                    }
                }
            }
            if self.at(".") && self.peek_at(1).is_some_and(|t| t.kind == TokenKind::Identifier) {
                self.bump();
                self.bump();
            } else {
                break;
            }
        }
        Ok(self.node("Type", start, args))
    }
}
