/// Node-type labels produced by the parser. Names follow the javalang
/// conventions so that linearized sequences read like javalang output.
pub const LABELS: &[&str] = &[
    "MethodDeclaration",
    "Modifier",
    "Annotation",
    "TypeParameter",
    "Type",
    "FormalParameter",
    "Throws",
    "BlockStatement",
    "LocalVariableDeclaration",
    "VariableDeclarator",
    "StatementExpression",
    "IfStatement",
    "WhileStatement",
    "DoStatement",
    "ForStatement",
    "ForControl",
    "EnhancedForControl",
    "SwitchStatement",
    "SwitchStatementCase",
    "TryStatement",
    "TryResource",
    "CatchClause",
    "CatchClauseParameter",
    "FinallyBlock",
    "ReturnStatement",
    "ThrowStatement",
    "BreakStatement",
    "ContinueStatement",
    "SynchronizedStatement",
    "AssertStatement",
    "EmptyStatement",
    "Assignment",
    "TernaryExpression",
    "BinaryOperation",
    "UnaryOperation",
    "PostfixOperation",
    "Cast",
    "MethodInvocation",
    "SuperMethodInvocation",
    "ExplicitConstructorInvocation",
    "SuperConstructorInvocation",
    "FieldAccess",
    "SuperMemberReference",
    "MemberReference",
    "ArraySelector",
    "ClassCreator",
    "ArrayCreator",
    "ArrayInitializer",
    "ClassReference",
    "Literal",
    "This",
];

pub fn is_label(s: &str) -> bool {
    LABELS.contains(&s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub label: &'static str,
    pub children: Vec<AstNode>,
    /// Inclusive `(first, last)` token indices covered by the construct.
    pub span: (usize, usize),
}

impl AstNode {
    pub fn leaf(label: &'static str, span: (usize, usize)) -> Self {
        AstNode { label, children: Vec::new(), span }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(AstNode::depth).max().unwrap_or(0)
    }

    /// Pre-order iterator over the tree.
    pub fn iter(&self) -> impl Iterator<Item = &AstNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            stack.extend(node.children.iter().rev());
            Some(node)
        })
    }

    /// Checks the structural span invariants: children lie inside the parent,
    /// siblings are ordered and disjoint, and leaves cover at least one token.
    pub fn check_spans(&self) -> Result<(), String> {
        let (lo, hi) = self.span;
        if lo > hi {
            return Err(format!("{} has inverted span {:?}", self.label, self.span));
        }
        let mut prev_end: Option<usize> = None;
        for child in &self.children {
            let (clo, chi) = child.span;
            if clo < lo || chi > hi || (clo, chi) == (lo, hi) {
                return Err(format!("{} {:?} not strictly inside {} {:?}", child.label, child.span, self.label, self.span));
            }
            if prev_end.is_some_and(|e| clo <= e) {
                return Err(format!("overlapping siblings under {} at {:?}", self.label, child.span));
            }
            prev_end = Some(chi);
            child.check_spans()?;
        }
        Ok(())
    }

    /// Renders the tree as `Label[Child, Child[...]]`.
    pub fn render(&self) -> String {
        if self.children.is_empty() {
            return self.label.to_string();
        }
        let inner: Vec<String> = self.children.iter().map(AstNode::render).collect();
        format!("{}[{}]", self.label, inner.join(", "))
    }
}
