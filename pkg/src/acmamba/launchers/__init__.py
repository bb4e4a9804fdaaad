"""Stage runners invoked by the acmamba CLI."""
