//! Line iteration shared by the flat text tables.

/// Yields `(line_number, trimmed_content)` for every non-blank line with
/// `#` comments stripped.
pub(crate) fn content_lines(src: &str) -> impl Iterator<Item = (usize, &str)> {
    src.lines().enumerate().filter_map(|(i, line)| {
        let line = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        };
        let line = line.trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}
