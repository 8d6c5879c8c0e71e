/// Lowercases and splits on whitespace; punctuation and emoji become tokens
/// of their own. An apostrophe stays inside a word when a letter or digit
/// follows it (`i'm`). Emoji modifiers and joiners stay attached to the
/// emoji they follow.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut chars = text.chars().peekable();

    while let Some(ch) = chars.next() {
        if ch.is_whitespace() {
            flush(&mut word, &mut tokens);
        } else if is_emoji_modifier(ch) {
            match tokens.last_mut() {
                Some(last) if word.is_empty() && last.chars().next().is_some_and(is_emoji) => {
                    last.push(ch)
                }
                _ => {
                    flush(&mut word, &mut tokens);
                    tokens.push(ch.to_string());
                }
            }
        } else if is_emoji(ch) {
            flush(&mut word, &mut tokens);
            tokens.push(ch.to_string());
        } else if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else if is_apostrophe(ch)
            && !word.is_empty()
            && chars.peek().is_some_and(|c| c.is_alphanumeric())
        {
            word.push(ch);
        } else {
            flush(&mut word, &mut tokens);
            tokens.push(ch.to_lowercase().collect());
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn flush(word: &mut String, tokens: &mut Vec<String>) {
    if !word.is_empty() {
        tokens.push(std::mem::take(word));
    }
}

fn is_apostrophe(ch: char) -> bool {
    ch == '\'' || ch == '\u{2019}'
}

fn is_emoji(ch: char) -> bool {
    matches!(ch as u32,
        0x1F000..=0x1F3FA
        | 0x1F400..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2B00..=0x2BFF
        | 0x3030 | 0x303D | 0x3297 | 0x3299)
}

fn is_emoji_modifier(ch: char) -> bool {
    matches!(
        ch as u32,
        0x1F3FB..=0x1F3FF | 0xFE0E | 0xFE0F | 0x200D | 0x20E3
    )
}
