"""Sample-design toolkit for instruction-tuned sentiment and span extraction."""
