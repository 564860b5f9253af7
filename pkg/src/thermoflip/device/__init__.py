"""Device boundary: wire protocol, backends and trace files."""
