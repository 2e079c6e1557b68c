"""Fractured shape repair: joint occupancy, SDF and normal fields for complete and break shapes."""
