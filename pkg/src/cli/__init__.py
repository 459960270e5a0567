"""Gate Energetics - línea de órdenes"""
