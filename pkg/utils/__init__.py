"""Process settings and logging."""
