def count_tokens(text: str) -> int:
    """Whitespace-delimited word count; stands in for a real tokenizer."""
    return len(text.split())
