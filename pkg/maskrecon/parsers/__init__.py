# Decoders for the on-disk formats (PFM, camera JSON, PNG).
