/// Per-benchmark query instructions for CoIR and CodeRAG.
pub const BENCHMARK_INSTRUCTIONS: [(&str, &str); 16] = [
    ("Apps", "Given a code contest problem description, retrieve relevant code that can help solve the problem."),
    ("CosQA", "Given a web search query, retrieve relevant code that can help answer the query."),
    ("Text2SQL", "Given a question in text, retrieve SQL queries that are appropriate responses to the question."),
    ("CSN", "Given a piece of code, retrieve the document string that summarizes the code."),
    ("CSN-CCR", "Given a piece of code segment, retrieve the code segment that is the latter part of the code."),
    ("CodeTrans-DL", "Given a piece of code, retrieve code that is semantically equivalent to the input code."),
    ("CodeTrans-Contest", "Given a piece of Python code, retrieve C++ code that is semantically equivalent to the input code."),
    ("StackOverFlow-QA", "Given a question that consists of a mix of text and code snippets, retrieve relevant answers that also consist of a mix of text and code snippets, and can help answer the question."),
    ("CodeFeedBack-ST", "Given a question that consists of a mix of text and code snippets, retrieve relevant answers that also consist of a mix of text and code snippets, and can help answer the question."),
    ("CodeFeedBack-MT", "Given a multi-turn conversation history that consists of a mix of text and code snippets, retrieve relevant answers that also consist of a mix of text and code snippets, and can help answer the question."),
    ("HumanEval", "Given a question that consists of a mix of text and code snippets, retrieve relevant answers that also consist of a mix of text and code snippets, and can help answer the question."),
    ("MBPP", "Given a textual explanation of code functionality, retrieve the corresponding code implementation."),
    ("DS-1000", "Given a question that consists of a mix of text and code snippets, retrieve relevant answers that also consist of a mix of text and code snippets, and can help answer the question."),
    ("ODEX", "Given a question, retrieve relevant answers that also consist of a mix of text and code snippets, and can help answer the question."),
    ("RepoEval", "Given a piece of code segment, retrieve the code segment that is the latter part of the code."),
    ("SWE-bench-Lite", "Given a code snippet containing a bug and a natural language description of the bug or error, retrieve code snippets that demonstrate solutions or fixes for similar bugs or errors (the desired documents)."),
];

/// Dataset directory names used by public CoIR releases.
const ALIASES: [(&str, &str); 5] = [
    ("synthetic-text2sql", "Text2SQL"),
    ("codesearchnet", "CSN"),
    ("codesearchnet-ccr", "CSN-CCR"),
    ("hummaneval", "HumanEval"),
    ("swe-bench_lite", "SWE-bench-Lite"),
];

fn normalize(name: &str) -> String {
    name.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Built-in instruction for a benchmark, matched ignoring case and punctuation.
pub fn instruction_for(name: &str) -> Option<&'static str> {
    let key = normalize(name);
    let canonical = ALIASES
        .iter()
        .find(|(alias, _)| normalize(alias) == key)
        .map_or(key, |(_, c)| normalize(c));
    BENCHMARK_INSTRUCTIONS
        .iter()
        .find(|(n, _)| normalize(n) == canonical)
        .map(|(_, i)| *i)
}
