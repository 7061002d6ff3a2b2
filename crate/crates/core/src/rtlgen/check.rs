//! Minimal structural lint for generated VHDL.
//!
//! Confirms that design units and statement blocks open and close in
//! matching pairs. It is not a parser; it exists to catch template drift
//! without an HDL toolchain in the loop.

/// Checks block balance of `entity`, `architecture`, `package`, `process`,
/// `function`, `if`, `case` and `loop`.
pub fn check_structure(text: &str) -> Result<(), String> {
    let tokens = tokenize(text);
    let mut stack: Vec<(&str, usize)> = Vec::new();
    let mut k = 0;
    while k < tokens.len() {
        let (tok, line) = (tokens[k].0.as_str(), tokens[k].1);
        let prev = if k > 0 { tokens[k - 1].0.as_str() } else { "" };
        match tok {
            "end" => {
                let closes = tokens.get(k + 1).map(|t| t.0.as_str()).unwrap_or("");
                let kind = match closes {
                    "entity" | "architecture" | "package" | "process" | "function" | "if"
                    | "case" | "loop" => closes,
                    other => {
                        return Err(format!("line {line}: bare `end {other}` is not allowed"))
                    }
                };
                match stack.pop() {
                    Some((open, _)) if open == kind => {}
                    Some((open, at)) => {
                        return Err(format!(
                            "line {line}: `end {kind}` closes `{open}` opened on line {at}"
                        ))
                    }
                    None => return Err(format!("line {line}: `end {kind}` without opener")),
                }
                k += 2;
                continue;
            }
            "entity" if prev != "end" && prev != ":" && prev != "." => {
                // `u0 : entity work.x` is an instantiation, not a declaration
                stack.push(("entity", line))
            }
            "architecture" => stack.push(("architecture", line)),
            "package" => stack.push(("package", line)),
            "process" => stack.push(("process", line)),
            "function" => stack.push(("function", line)),
            "case" => stack.push(("case", line)),
            "if" => stack.push(("if", line)),
            "loop" => stack.push(("loop", line)),
            _ => {}
        }
        k += 1;
    }
    match stack.pop() {
        Some((open, at)) => Err(format!("`{open}` opened on line {at} is never closed")),
        None => Ok(()),
    }
}

/// Lowercased identifier/keyword tokens with their line numbers. Comments,
/// string and bit-string literals are skipped.
fn tokenize(text: &str) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split("--").next().unwrap_or("");
        let mut word = String::new();
        let mut in_str = false;
        for ch in line.chars() {
            if in_str {
                in_str = ch != '"';
                continue;
            }
            if ch == '"' {
                in_str = true;
                word.clear();
                continue;
            }
            if ch.is_ascii_alphanumeric() || ch == '_' {
                word.push(ch.to_ascii_lowercase());
            } else {
                if !word.is_empty() {
                    out.push((std::mem::take(&mut word), n + 1));
                }
                if ch == ':' || ch == '.' {
                    out.push((ch.to_string(), n + 1));
                }
            }
        }
        if !word.is_empty() {
            out.push((word, n + 1));
        }
    }
    out
}
